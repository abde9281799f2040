//! Block layouts of the four constructions and their sampling.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::group::{generate_group, group_condition_check, orbit, reflection_t, GroupElement};
use super::{
    meridian_angles, unit_from_angles, weight_from_distance, Assembly, AssemblyParams, BlockId, Construction, Face,
    FaceAttach, NamedSymmetry, NeckBlock, Parametric, PoleTerm, RegionKind, RegionLabel, SampleGrid, Sampling,
    Sheet, SphereBlock, SpherePerturbation, SurfaceSample, TorusBlock,
};
use crate::ambient::{clifford_frame, rotation_matrix};
use crate::blocks::{catenoid_profile, green_function, sphere_frame};
use crate::error::{Error, Result};
use crate::matching::{
    closure_check, expansion_constants, gaps, gcd, handle_parameters, neck_defect, neck_scale, solve_neck_system_with_offsets,
    solve_scale, symmetric_sigma, truncation_radius, HandleMode, HandleTarget, NeckSolve,
};

const CLOSURE_TOL: f64 = 1e-9;

fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub fn assemble(params: &AssemblyParams) -> Result<Assembly> {
    if params.n < 2 {
        return config("dimension n must be at least 2");
    }
    if !(params.rho0 > 0.0 && params.rho0.is_finite()) {
        return config(format!("rho0 = {} must be positive", params.rho0));
    }
    if !(params.eps_factor > 0.0 && params.eps_factor.is_finite()) {
        return config("eps_factor must be positive");
    }
    if params.sigma.iter().any(|s| !s.is_finite()) {
        return config("sigma entries must be finite");
    }
    let mut asm = match params.construction {
        Construction::Delaunay => delaunay(params)?,
        Construction::TwoGeodesic => two_geodesic(params)?,
        Construction::Handle => handle(params)?,
        Construction::Doubling => doubling(params)?,
    };
    check_necks(&asm)?;
    if params.sampling != Sampling::Skeleton {
        sample_all(&mut asm)?;
    }
    Ok(asm)
}

fn check_necks(asm: &Assembly) -> Result<()> {
    let rho0 = asm.params.rho0;
    for (j, nk) in asm.necks.iter().enumerate() {
        if !(nk.gap > 0.0) {
            return Err(Error::Infeasible(format!("neck {j}: neighbouring blocks overlap (gap {})", nk.gap)));
        }
        if !(rho0 > 10.0 * nk.rho) {
            return Err(Error::Infeasible(format!(
                "neck {j}: rho0 = {rho0} must exceed 10 rho_eps = {}",
                10.0 * nk.rho
            )));
        }
        if !(nk.rho >= 2.0 * nk.eps_bar) {
            return Err(Error::Infeasible(format!(
                "neck {j}: scale eps_bar = {} too large for the truncation radius {}",
                nk.eps_bar, nk.rho
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Layout

enum Attach {
    Sphere(usize),
    Torus(usize),
}

struct Layout {
    n: usize,
    alpha: f64,
    spheres: Vec<SphereBlock>,
    necks: Vec<NeckBlock>,
    tori: Vec<TorusBlock>,
}

impl Layout {
    fn new(n: usize, alpha: f64) -> Self {
        Self { n, alpha, spheres: Vec::new(), necks: Vec::new(), tori: Vec::new() }
    }

    fn add_sphere(&mut self, placement: DMatrix<f64>, perturbation: SpherePerturbation) -> usize {
        self.spheres.push(SphereBlock { placement, alpha: self.alpha, perturbation, faces: Vec::new() });
        self.spheres.len() - 1
    }

    fn face(&mut self, neck: usize, placement: &DMatrix<f64>, gap: f64, sheet: Sheet, at: Attach) -> Result<Face> {
        let dim = self.n + 2;
        match at {
            Attach::Torus(t) => {
                self.tori[t].faces.push((neck, sheet));
                Ok(Face { attach: FaceAttach::Torus { torus: t }, axisymmetric: false })
            }
            Attach::Sphere(i) => {
                let offset = self.alpha + 0.5 * gap;
                let mut frame = match sheet {
                    Sheet::Lower => placement * rotation_matrix(0, 1, -offset, dim),
                    Sheet::Upper => placement * rotation_matrix(0, 1, offset, dim),
                };
                if sheet == Sheet::Upper {
                    frame.column_mut(1).neg_mut();
                }
                let rel = self.spheres[i].placement.transpose() * frame;
                if (rel[(0, 0)] - 1.0).abs() > 1e-9 {
                    return Err(Error::Singular(format!("neck {neck} does not point at the centre of sphere {i}")));
                }
                let map = rel.view((1, 1), (dim - 1, dim - 1)).into_owned();
                let axisymmetric =
                    self.spheres[i].perturbation.is_axisymmetric() && (map[(0, 0)].abs() - 1.0).abs() < 1e-9;
                self.spheres[i].faces.push((neck, sheet));
                Ok(Face { attach: FaceAttach::Sphere { sphere: i, map, offset }, axisymmetric })
            }
        }
    }

    fn add_neck(
        &mut self,
        placement: DMatrix<f64>,
        eps_bar: f64,
        b_bar: f64,
        gap: f64,
        lower: Attach,
        upper: Attach,
    ) -> Result<usize> {
        let j = self.necks.len();
        let lower = self.face(j, &placement, gap, Sheet::Lower, lower)?;
        let upper = self.face(j, &placement, gap, Sheet::Upper, upper)?;
        let rho = truncation_radius(self.n, eps_bar);
        self.necks.push(NeckBlock { placement, eps_bar, b_bar, rho, gap, lower, upper });
        Ok(j)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        params: &AssemblyParams,
        neck_solve: NeckSolve,
        tau: f64,
        n_spheres: usize,
        m: usize,
        h_target: f64,
        symmetries: Vec<NamedSymmetry>,
    ) -> Assembly {
        Assembly {
            params: params.clone(),
            neck_solve,
            alpha_sphere: self.alpha,
            tau,
            n_spheres,
            m,
            h_target,
            spheres: self.spheres,
            necks: self.necks,
            tori: self.tori,
            samples: Vec::new(),
            grids: Vec::new(),
            symmetries,
            group: Vec::new(),
            orbit_size: 1,
            mesh_edge: 0.0,
        }
    }
}

fn green_pole(n: usize, eps: f64, linear: f64) -> SpherePerturbation {
    SpherePerturbation {
        n,
        amplitude: eps.powi(n as i32 - 1),
        terms: vec![PoleTerm { axis: 0, green: 1.0, linear }],
    }
}

fn flip(dim: usize, i: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(dim, dim);
    m[(i, i)] = -1.0;
    m
}

fn swap(dim: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(dim, dim);
    m[(i, i)] = 0.0;
    m[(j, j)] = 0.0;
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

/// Orthogonal matrix from the QR factor of a uniform random matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize, special: bool) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = a.qr().q();
    if special && q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// `(N, m, α, τ)` of a closed chain on one great circle.
fn chain_closure(p: &AssemblyParams) -> Result<(usize, usize, f64, f64)> {
    let Some(tau) = p.tau else {
        return config("tau is required");
    };
    if !(tau > 0.0) {
        return config(format!("tau = {tau} must be positive"));
    }
    let (alpha, n_sph, m) = match (p.n_spheres, p.m) {
        (Some(big_n), Some(m)) => {
            if big_n < 2 || m == 0 || gcd(m, big_n) != 1 {
                return config(format!("N = {big_n}, m = {m} must be coprime with N >= 2, m >= 1"));
            }
            let alpha = (2.0 * PI * m as f64 / big_n as f64 - tau) / 2.0;
            if let Some(a) = p.alpha {
                if (a - alpha).abs() > CLOSURE_TOL {
                    return config(format!(
                        "closure 2 alpha + tau = 2 pi m / N fails: alpha = {a}, closure needs {alpha}"
                    ));
                }
            }
            (alpha, big_n, m)
        }
        _ => {
            let Some(alpha) = p.alpha else {
                return config("alpha (or N and m) is required");
            };
            let c = closure_check(alpha, tau, CLOSURE_TOL, 10_000);
            let (Some(big_n), Some(m)) = (c.n_spheres, c.m) else {
                return config(format!("closure 2 alpha + tau = 2 pi m / N fails for alpha = {alpha}, tau = {tau}"));
            };
            (alpha, big_n, m)
        }
    };
    if !(alpha > 0.0 && alpha <= FRAC_PI_2) {
        return config(format!("sphere radius alpha = {alpha} outside (0, pi/2]"));
    }
    // Absorb the closure tolerance into τ.
    let tau = 2.0 * PI * m as f64 / n_sph as f64 - 2.0 * alpha;
    Ok((n_sph, m, alpha, tau))
}

fn uniform_solve(n: usize, alpha: f64, tau: f64, count: usize, eps_factor: f64) -> Result<NeckSolve> {
    let eps = solve_scale(n, alpha, tau)? * eps_factor;
    let big_c = expansion_constants(n, alpha, tau)?.big_c;
    let defect = neck_defect(n, alpha, tau, eps)?;
    Ok(NeckSolve {
        eps,
        eps_k: vec![eps; count],
        b_k: vec![0.0; count],
        eps_bar_k: vec![neck_scale(n, eps, big_c); count],
        b_bar_k: vec![0.0; count],
        tau_k: vec![tau; count],
        defect_k: vec![defect; count],
        residual: defect.abs(),
    })
}

/// Rescales the sphere scale of a solved system (negative controls).
fn rescale(n: usize, alpha: f64, mut s: NeckSolve, factor: f64) -> Result<NeckSolve> {
    if factor == 1.0 {
        return Ok(s);
    }
    s.eps *= factor;
    s.eps_k.iter_mut().for_each(|e| *e = s.eps);
    for (k, &t) in s.tau_k.iter().enumerate() {
        s.eps_bar_k[k] = neck_scale(n, s.eps, expansion_constants(n, alpha, t)?.big_c);
        s.defect_k[k] = neck_defect(n, alpha, t, s.eps)?;
    }
    s.residual = s.defect_k.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
    Ok(s)
}

// ---------------------------------------------------------------------------
// Constructions

fn delaunay(p: &AssemblyParams) -> Result<Assembly> {
    let n = p.n;
    let dim = n + 2;
    let (big_n, m, alpha, tau) = chain_closure(p)?;
    if p.sigma.iter().any(|s| *s != 0.0) {
        return config("the delaunay construction has no displacement parameters");
    }
    let solve = uniform_solve(n, alpha, tau, big_n, p.eps_factor)?;
    let eps = solve.eps;
    let beta = 2.0 * alpha + tau;
    let mut lay = Layout::new(n, alpha);
    for k in 0..big_n {
        lay.add_sphere(rotation_matrix(0, 1, k as f64 * beta, dim), green_pole(n, eps, 0.0));
    }
    for k in 0..big_n {
        let pl = rotation_matrix(0, 1, k as f64 * beta + alpha + 0.5 * tau, dim);
        lay.add_neck(pl, solve.eps_bar_k[k], 0.0, tau, Attach::Sphere(k), Attach::Sphere((k + 1) % big_n))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut s01 = DMatrix::identity(dim, dim);
    s01.view_mut((2, 2), (n, n)).copy_from(&random_orthogonal(&mut rng, n, true));
    let symmetries = vec![
        NamedSymmetry { name: "R".into(), matrix: rotation_matrix(0, 1, beta, dim) },
        NamedSymmetry { name: "T".into(), matrix: flip(dim, 1) },
        NamedSymmetry { name: "S01_B".into(), matrix: s01 },
    ];
    let h = n as f64 / alpha.tan();
    Ok(lay.finish(p, solve, tau, big_n, m, h, symmetries))
}

/// Full displacement vector from either the free values or all `N` entries.
fn chain_sigma(p: &AssemblyParams, big_n: usize) -> Result<Vec<f64>> {
    let free = (big_n - 2) / 4;
    match p.sigma.len() {
        0 => Ok(vec![0.0; big_n]),
        l if l == big_n => Ok(p.sigma.clone()),
        l if l == free => symmetric_sigma(big_n, &p.sigma),
        l => config(format!("sigma has {l} entries; expected {free} free values or {big_n} in total")),
    }
}

fn two_geodesic(p: &AssemblyParams) -> Result<Assembly> {
    let n = p.n;
    let dim = n + 2;
    let (big_n, m, alpha, tau) = chain_closure(p)?;
    if big_n % 2 != 0 || (big_n / 2) % 2 == 0 {
        return config(format!("two_geodesic needs N even with N/2 odd, got N = {big_n}"));
    }
    let sigma = chain_sigma(p, big_n)?;
    let half = big_n / 2;
    // On the shared spheres the other chain's pole pair adds G(π/2) at these
    // poles, which moves the faces by a constant the necks must absorb.
    let push = -green_function(n, FRAC_PI_2)?;
    let shared = |k: usize| k % half == 0;
    let offsets: Vec<(f64, f64)> = (0..big_n)
        .map(|k| {
            let at = |s: usize| if shared(s) { push } else { 0.0 };
            (at(k), at((k + 1) % big_n))
        })
        .collect();
    let solve = if p.enforce_symmetry {
        solve_neck_system_with_offsets(n, alpha, tau, &sigma, &offsets).map_err(|e| match e {
            Error::Argument(msg) => Error::Config(msg),
            other => other,
        })?
    } else {
        // Unbalanced control: per-gap scales, no translations.
        let tau_k = gaps(tau, &sigma);
        let eps = solve_scale(n, alpha, tau)?;
        let mut s = uniform_solve(n, alpha, tau, big_n, 1.0)?;
        for (k, &t) in tau_k.iter().enumerate() {
            if !(t > 0.0) {
                return Err(Error::Infeasible(format!("neighbouring spheres overlap: tau_k = {t}")));
            }
            s.eps_bar_k[k] = neck_scale(n, eps, expansion_constants(n, alpha, t)?.big_c);
            s.defect_k[k] = neck_defect(n, alpha, t, eps)?;
        }
        s.residual = s.defect_k.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
        s.tau_k = tau_k;
        s
    };
    let solve = rescale(n, alpha, solve, p.eps_factor)?;
    let eps = solve.eps;
    let kappa = 2.0 * (0.25 * tau).cos().powi(2);
    let theta: Vec<f64> = (0..big_n).map(|k| k as f64 * (2.0 * alpha + tau) + sigma[k]).collect();
    let q = swap(dim, 1, 2);
    let mut lay = Layout::new(n, alpha);
    for k in 0..big_n {
        let pert = if k == 0 || k == half {
            SpherePerturbation {
                n,
                amplitude: eps.powi(n as i32 - 1),
                terms: vec![
                    PoleTerm { axis: 0, green: 1.0, linear: -kappa * solve.b_k[k] },
                    PoleTerm { axis: 1, green: 1.0, linear: 0.0 },
                ],
            }
        } else {
            green_pole(n, eps, -kappa * solve.b_k[k])
        };
        lay.add_sphere(rotation_matrix(0, 1, theta[k], dim), pert);
    }
    let mut second = vec![0usize; big_n];
    for k in 0..big_n {
        second[k] = if k == 0 || k == half {
            k
        } else {
            lay.add_sphere(&q * rotation_matrix(0, 1, theta[k], dim), green_pole(n, eps, -kappa * solve.b_k[k]))
        };
    }
    for (frame, index) in [(DMatrix::identity(dim, dim), (0..big_n).collect::<Vec<_>>()), (q.clone(), second)] {
        for k in 0..big_n {
            let t = solve.tau_k[k];
            let pl = &frame * rotation_matrix(0, 1, theta[k] + alpha + 0.5 * t, dim);
            let (lo, up) = (index[k], index[(k + 1) % big_n]);
            lay.add_neck(pl, solve.eps_bar_k[k], solve.b_bar_k[k], t, Attach::Sphere(lo), Attach::Sphere(up))?;
        }
    }
    let symmetries = vec![
        NamedSymmetry { name: "T0".into(), matrix: flip(dim, 0) },
        NamedSymmetry { name: "T1".into(), matrix: flip(dim, 1) },
        NamedSymmetry { name: "T2".into(), matrix: flip(dim, 2) },
        NamedSymmetry { name: "Q".into(), matrix: q },
    ];
    let h = n as f64 / alpha.tan();
    Ok(lay.finish(p, solve, tau, big_n, m, h, symmetries))
}

/// `α` is taken as given when set; otherwise it is solved from `τ`.
fn torus_params(p: &AssemblyParams, mode: HandleMode) -> Result<(f64, usize, usize)> {
    if p.n1 == 0 || p.n2 == 0 || p.n1 + p.n2 != p.n {
        return config(format!("need n1, n2 >= 1 with n1 + n2 = n, got {} + {} vs {}", p.n1, p.n2, p.n));
    }
    let Some(big_n) = p.n_spheres else {
        return config("the number of spheres N is required");
    };
    let m = p.m.unwrap_or(1);
    let alpha = match (p.alpha, p.tau) {
        (Some(a), _) => a,
        (None, Some(tau)) => handle_parameters(p.n1, p.n2, HandleTarget::Tau(tau), big_n, m, mode)?.alpha,
        (None, None) => return config("the torus needs alpha or tau"),
    };
    Ok((alpha, big_n, m))
}

fn check_tau(p: &AssemblyParams, tau: f64) -> Result<()> {
    match p.tau {
        Some(t) if (t - tau).abs() > 1e-9 => {
            config(format!("tau is determined by alpha and N: expected {tau}, got {t}"))
        }
        _ => Ok(()),
    }
}

fn arm_sigma(p: &AssemblyParams, big_n: usize) -> Result<Vec<f64>> {
    match p.sigma.len() {
        0 => Ok(vec![0.0; big_n]),
        l if l == big_n => Ok(p.sigma.clone()),
        l => config(format!("sigma has {l} entries; expected {big_n}")),
    }
}

/// Neck scales and defects for explicit gaps at uniform sphere scale.
fn gap_solve(n: usize, alpha: f64, eps: f64, gaps: Vec<f64>, spheres: usize) -> Result<NeckSolve> {
    let mut eps_bar_k = Vec::with_capacity(gaps.len());
    let mut defect_k = Vec::with_capacity(gaps.len());
    for &g in &gaps {
        if !(g > 0.0) {
            return Err(Error::Infeasible(format!("neighbouring blocks overlap: gap {g}")));
        }
        eps_bar_k.push(neck_scale(n, eps, expansion_constants(n, alpha, g)?.big_c));
        defect_k.push(neck_defect(n, alpha, g, eps)?);
    }
    let residual = defect_k.iter().fold(0.0, |a: f64, b: &f64| a.max(b.abs()));
    Ok(NeckSolve {
        eps,
        eps_k: vec![eps; spheres],
        b_k: vec![0.0; spheres],
        b_bar_k: vec![0.0; gaps.len()],
        eps_bar_k,
        tau_k: gaps,
        defect_k,
        residual,
    })
}

fn handle(p: &AssemblyParams) -> Result<Assembly> {
    let n = p.n;
    let dim = n + 2;
    let (alpha, big_n, m) = torus_params(p, HandleMode::Handle)?;
    let hp = handle_parameters(p.n1, p.n2, HandleTarget::Alpha(alpha), big_n, m, HandleMode::Handle)?;
    check_tau(p, hp.tau)?;
    let (hat, tau) = (hp.alpha_hat, hp.tau);
    let sigma = arm_sigma(p, big_n)?;
    if p.enforce_symmetry && (0..big_n).any(|k| (sigma[k] - sigma[big_n - 1 - k]).abs() > 1e-15) {
        return config("handle displacements must satisfy sigma_k = sigma_{N-k-1}");
    }
    let eps = solve_scale(n, hat, tau)? * p.eps_factor;
    let centre: Vec<f64> =
        (0..big_n).map(|k| -(k as f64 * (2.0 * hat + tau) + hat + tau) - sigma[k]).collect();
    let t_end = -(2.0 * big_n as f64 * hat + (big_n + 1) as f64 * tau);
    // Neck k has sphere k (or the torus at t_end) below and sphere k − 1 (or p) above.
    let edges: Vec<(f64, f64)> = (0..=big_n)
        .map(|k| {
            let lo = if k == big_n { t_end } else { centre[k] + hat };
            let hi = if k == 0 { 0.0 } else { centre[k - 1] - hat };
            (lo, hi)
        })
        .collect();
    let solve = gap_solve(n, hat, eps, edges.iter().map(|(a, b)| b - a).collect(), big_n)?;
    let frame = clifford_frame(p.n1, p.n2, alpha);
    let place = |t: f64| rotation_matrix(0, p.n1 + 1, t, dim) * &frame;
    let mut lay = Layout::new(n, hat);
    lay.tori.push(TorusBlock { alpha, n1: p.n1, n2: p.n2, faces: Vec::new() });
    for &c in &centre {
        lay.add_sphere(place(c), green_pole(n, eps, 0.0));
    }
    for (k, &(lo, hi)) in edges.iter().enumerate() {
        let lower = if k == big_n { Attach::Torus(0) } else { Attach::Sphere(k) };
        let upper = if k == 0 { Attach::Torus(0) } else { Attach::Sphere(k - 1) };
        let gap = hi - lo;
        lay.add_neck(place(lo + 0.5 * gap), solve.eps_bar_k[k], 0.0, gap, lower, upper)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut s00 = DMatrix::identity(dim, dim);
    s00.view_mut((1, 1), (p.n1, p.n1)).copy_from(&random_orthogonal(&mut rng, p.n1, false));
    s00.view_mut((p.n1 + 2, p.n1 + 2), (p.n2, p.n2)).copy_from(&random_orthogonal(&mut rng, p.n2, false));
    let symmetries = vec![
        NamedSymmetry { name: "T".into(), matrix: flip(dim, p.n1 + 1) },
        NamedSymmetry { name: "S00_B".into(), matrix: s00 },
    ];
    let h = n as f64 / hat.tan();
    Ok(lay.finish(p, solve, tau, big_n, m, h, symmetries))
}

fn doubling(p: &AssemblyParams) -> Result<Assembly> {
    let n = p.n;
    let dim = n + 2;
    let (alpha, big_n, m) = torus_params(p, HandleMode::Doubling)?;
    if p.group.is_empty() {
        return config("the doubling needs symmetry group generators");
    }
    let group = generate_group(&p.group)?;
    let check = group_condition_check(&group, p.n1, p.n2)?;
    if !check.passes {
        return Err(Error::Infeasible(format!(
            "group condition fails: {} independent invariant functions x1^j x2^j'",
            check.fixed_dimension
        )));
    }
    let t = reflection_t(p.n1, p.n2);
    if !group.iter().any(|g| g.approx_eq(&t, 1e-9)) {
        return Err(Error::Infeasible("the group must contain T = (T1, T2)".into()));
    }
    let hp = handle_parameters(p.n1, p.n2, HandleTarget::Alpha(alpha), big_n, m, HandleMode::Doubling)?;
    check_tau(p, hp.tau)?;
    let (hat, tau) = (hp.alpha_hat, hp.tau);
    let bar = hp.alpha_bar.expect("doubling mode returns the opposite torus");
    let sigma = arm_sigma(p, big_n)?;
    let eps = solve_scale(n, hat, tau)? * p.eps_factor;
    // Sphere k = 1..N sits at (2k−1)α̂ + kτ + σ_k; index k − 1 here.
    let centre: Vec<f64> =
        (1..=big_n).map(|k| (2 * k - 1) as f64 * hat + k as f64 * tau + sigma[k - 1]).collect();
    let t_end = bar - alpha + 2.0 * PI * m as f64;
    let edges: Vec<(f64, f64)> = (0..=big_n)
        .map(|k| {
            let lo = if k == 0 { 0.0 } else { centre[k - 1] + hat };
            let hi = if k == big_n { t_end } else { centre[k] - hat };
            (lo, hi)
        })
        .collect();
    let solve = gap_solve(n, hat, eps, edges.iter().map(|(a, b)| b - a).collect(), big_n)?;
    let frame = clifford_frame(p.n1, p.n2, alpha);
    let base = frame.column(0).into_owned();
    let arms = orbit(&group, &base, 1e-9);
    let mut lay = Layout::new(n, hat);
    for a in [alpha, bar] {
        lay.tori.push(TorusBlock { alpha: a, n1: p.n1, n2: p.n2, faces: Vec::new() });
    }
    for (g, _) in &arms {
        let omega = group[*g].ambient();
        let place = |t: f64| &omega * rotation_matrix(0, p.n1 + 1, t, dim) * &frame;
        let first = lay.spheres.len();
        for &c in &centre {
            lay.add_sphere(place(c), green_pole(n, eps, 0.0));
        }
        for (k, &(lo, hi)) in edges.iter().enumerate() {
            let lower = if k == 0 { Attach::Torus(0) } else { Attach::Sphere(first + k - 1) };
            let upper = if k == big_n { Attach::Torus(1) } else { Attach::Sphere(first + k) };
            let gap = hi - lo;
            lay.add_neck(place(lo + 0.5 * gap), solve.eps_bar_k[k], 0.0, gap, lower, upper)?;
        }
    }
    let symmetries = p
        .group
        .iter()
        .enumerate()
        .map(|(i, g)| NamedSymmetry { name: format!("g{i}"), matrix: g.ambient() })
        .collect();
    let h = n as f64 / hat.tan();
    let mut asm = lay.finish(p, solve, tau, big_n, m, h, symmetries);
    asm.orbit_size = arms.len();
    asm.group = group;
    Ok(asm)
}

/// Generators of a doubling group as ambient matrices.
pub fn group_ambient(group: &[GroupElement]) -> Vec<DMatrix<f64>> {
    group.iter().map(GroupElement::ambient).collect()
}

// ---------------------------------------------------------------------------
// Sampling

/// Hyperspherical grid on `S^k`: shape per angle (last periodic) and angles.
fn direction_grid(k: usize, res: usize, profile: bool) -> (Vec<usize>, Vec<Vec<f64>>) {
    if profile {
        return (vec![1], vec![meridian_angles(k)]);
    }
    // Higher dimensional direction grids are held to about `4 res` points.
    let mut r = res.max(4);
    if k >= 2 {
        while r > 4 && r * (r / 2).pow(k as u32 - 1) > 4 * res {
            r -= 2;
        }
    }
    let mut shape = vec![(r / 2).max(2); k];
    shape[k - 1] = r;
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut a = vec![0.0; k];
        for i in (0..k).rev() {
            let idx = rem % shape[i];
            rem /= shape[i];
            a[i] = if i == k - 1 {
                2.0 * PI * idx as f64 / shape[i] as f64
            } else {
                PI * (idx as f64 + 0.5) / shape[i] as f64
            };
        }
        out.push(a);
    }
    (shape, out)
}

struct Part {
    kind: RegionKind,
    block: BlockId,
    side: Option<i8>,
    rows: usize,
    dir_shape: Vec<usize>,
    cells: Vec<Option<SurfaceSample>>,
}

fn sample_all(asm: &mut Assembly) -> Result<()> {
    let profile = asm.params.sampling == Sampling::Profile;
    if profile && asm.params.construction != Construction::Delaunay {
        return config("profile sampling needs an axisymmetric construction (delaunay)");
    }
    let res = asm.params.resolution.max(8);
    let order: Vec<BlockId> = if asm.params.construction == Construction::Delaunay {
        (0..asm.spheres.len()).flat_map(|k| [BlockId::Sphere(k), BlockId::Neck(k)]).collect()
    } else {
        (0..asm.spheres.len())
            .map(BlockId::Sphere)
            .chain((0..asm.necks.len()).map(BlockId::Neck))
            .chain((0..asm.tori.len()).map(BlockId::Torus))
            .collect()
    };
    let a: &Assembly = asm;
    let parts: Vec<Vec<Part>> = order
        .par_iter()
        .map(|b| match *b {
            BlockId::Sphere(i) => sample_sphere(a, i, res, profile).map(|p| vec![p]),
            BlockId::Neck(j) => sample_neck(a, j, res, profile),
            BlockId::Torus(t) => sample_torus(a, t, res).map(|p| vec![p]),
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    let mut grids = Vec::new();
    for part in parts.into_iter().flatten() {
        let mut cells = Vec::with_capacity(part.cells.len());
        for c in part.cells {
            cells.push(c.map(|s| {
                samples.push(s);
                samples.len() - 1
            }));
        }
        grids.push(SampleGrid {
            block: part.block,
            kind: part.kind,
            side: part.side,
            rows: part.rows,
            dir_shape: part.dir_shape,
            cells,
        });
    }
    asm.samples = samples;
    asm.grids = grids;
    asm.mesh_edge = mesh_edge(asm);
    Ok(())
}

fn make_sample(a: &Assembly, label: RegionLabel, par: Parametric, weight: Option<f64>, necks: &[usize]) -> Result<SurfaceSample> {
    let ambient = a.embed(&label, &par)?;
    let analytic_h = a.mean_curvature(&label, &par)?;
    let (weight, tube_distance) = match weight {
        Some(w) => (w, w),
        None => {
            let d = a.tube_distance(&ambient, necks);
            (weight_from_distance(d, a.params.rho0), d)
        }
    };
    Ok(SurfaceSample { ambient, region: label, parametric: par, weight, tube_distance, analytic_h })
}

fn sample_sphere(a: &Assembly, i: usize, res: usize, profile: bool) -> Result<Part> {
    let n = a.n();
    let sb = &a.spheres[i];
    let (shape, dirs) = direction_grid(n - 1, res, profile);
    let label = RegionLabel { kind: RegionKind::Exterior, block: BlockId::Sphere(i), side: None };
    let necks: Vec<usize> = sb.faces.iter().map(|f| f.0).collect();
    let axial = sb.faces.iter().all(|&(j, sh)| a.necks[j].face(sh).axisymmetric);
    let mut cells = Vec::new();
    let rows = res;
    if axial {
        // Rows run from the back face (μ near π) to the front face.
        let (mut lo, mut hi) = (PI / (2.0 * rows as f64), PI - PI / (2.0 * rows as f64));
        for &(j, sh) in &sb.faces {
            let neck = &a.necks[j];
            let FaceAttach::Sphere { map, offset, .. } = &neck.face(sh).attach else { unreachable!() };
            let th = unit_from_angles(&meridian_angles(n - 1));
            let (mu, _) = a.sphere_face_point(sb, map, *offset, 2.0 * neck.rho, &th)?;
            if map[(0, 0)] > 0.0 {
                lo = mu;
            } else {
                hi = PI - mu;
            }
        }
        for r in 0..rows {
            let mu = hi - (hi - lo) * r as f64 / (rows - 1) as f64;
            for d in &dirs {
                let par = Parametric::Sphere { mu, angles: d.clone() };
                cells.push(Some(make_sample(a, label, par, None, &necks)?));
            }
        }
    } else {
        for r in 0..rows {
            let mu = PI * (r as f64 + 0.5) / rows as f64;
            for d in &dirs {
                let (pnt, _) = sphere_frame(mu, &unit_from_angles(d));
                let bare = {
                    let mut x = DVector::zeros(n + 2);
                    x[0] = sb.alpha.cos();
                    x.rows_mut(1, n + 1).copy_from(&(&pnt * sb.alpha.sin()));
                    &sb.placement * x
                };
                let near = sb.faces.iter().any(|&(j, sh)| {
                    let neck = &a.necks[j];
                    let FaceAttach::Sphere { map, .. } = &neck.face(sh).attach else { unreachable!() };
                    let pole = map.column(0);
                    pnt.dot(&pole) > 0.0
                        && neck.to_chart(&bare).map(|y| y.yhat_norm() < 2.0 * neck.rho).unwrap_or(false)
                });
                cells.push(if near {
                    None
                } else {
                    let par = Parametric::Sphere { mu, angles: d.clone() };
                    Some(make_sample(a, label, par, None, &necks)?)
                });
            }
        }
    }
    Ok(Part { kind: RegionKind::Exterior, block: BlockId::Sphere(i), side: None, rows, dir_shape: shape, cells })
}

fn sample_neck(a: &Assembly, j: usize, res: usize, profile: bool) -> Result<Vec<Part>> {
    let n = a.n();
    let neck = &a.necks[j];
    let (shape, dirs) = direction_grid(n - 1, res, profile);
    let neck_rows = if profile { res } else { (res / 2).max(4) };
    let tr_rows = if profile { (res / 2).max(3) } else { (res / 4).max(3) };
    let s_max = neck.s_max(n);
    let transition = |sheet: Sheet| -> Result<Part> {
        let label = RegionLabel { kind: RegionKind::Transition, block: BlockId::Neck(j), side: Some(sheet.side()) };
        let (lo, hi) = (0.5 * neck.rho, 2.0 * neck.rho);
        let mut cells = Vec::new();
        for row in 0..tr_rows {
            // Strictly inside (ρ/2, 2ρ); lower rows run outward-in to follow the meridian.
            let k = match sheet {
                Sheet::Lower => tr_rows - row,
                Sheet::Upper => row + 1,
            };
            let r = lo + (hi - lo) * k as f64 / (tr_rows + 1) as f64;
            for d in &dirs {
                let par = Parametric::Transition { r, angles: d.clone() };
                cells.push(Some(make_sample(a, label, par, Some(r), &[j])?));
            }
        }
        Ok(Part {
            kind: RegionKind::Transition,
            block: BlockId::Neck(j),
            side: Some(sheet.side()),
            rows: tr_rows,
            dir_shape: shape.clone(),
            cells,
        })
    };
    let lower = transition(Sheet::Lower)?;
    let label = RegionLabel { kind: RegionKind::Neck, block: BlockId::Neck(j), side: None };
    let mut cells = Vec::new();
    for row in 0..neck_rows {
        let s = -s_max + 2.0 * s_max * row as f64 / (neck_rows - 1) as f64;
        let zeta = neck.eps_bar * catenoid_profile(n, s).phi;
        for d in &dirs {
            let par = Parametric::Neck { s, angles: d.clone() };
            cells.push(Some(make_sample(a, label, par, Some(zeta), &[j])?));
        }
    }
    let middle =
        Part { kind: RegionKind::Neck, block: BlockId::Neck(j), side: None, rows: neck_rows, dir_shape: shape.clone(), cells };
    let upper = transition(Sheet::Upper)?;
    Ok(vec![lower, middle, upper])
}

fn sample_torus(a: &Assembly, t: usize, res: usize) -> Result<Part> {
    let tb = &a.tori[t];
    let (_, d1) = direction_grid(tb.n1, res, false);
    let (s2, d2) = direction_grid(tb.n2, res, false);
    let label = RegionLabel { kind: RegionKind::Exterior, block: BlockId::Torus(t), side: None };
    let necks: Vec<usize> = tb.faces.iter().map(|f| f.0).collect();
    let mut cells = Vec::with_capacity(d1.len() * d2.len());
    for u1 in &d1 {
        for u2 in &d2 {
            let x = tb.point(&unit_from_angles(u1), &unit_from_angles(u2));
            let near = necks.iter().any(|&j| {
                let nk = &a.necks[j];
                nk.to_chart(&x).map(|y| y.yhat_norm() < 2.0 * nk.rho && y.y1.abs() < 0.5).unwrap_or(false)
            });
            cells.push(if near {
                None
            } else {
                let par = Parametric::Torus { angles1: u1.clone(), angles2: u2.clone() };
                Some(make_sample(a, label, par, None, &necks)?)
            });
        }
    }
    // Rows index the first factor; the second factor's grid is the direction shape.
    Ok(Part { kind: RegionKind::Exterior, block: BlockId::Torus(t), side: None, rows: d1.len(), dir_shape: s2, cells })
}

/// Largest distance between neighbouring grid cells.
fn mesh_edge(asm: &Assembly) -> f64 {
    let mut best = 0.0f64;
    let dist = |a: usize, b: usize| (&asm.samples[a].ambient - &asm.samples[b].ambient).norm();
    for g in &asm.grids {
        let cols = g.cols();
        for (flat, cell) in g.cells.iter().enumerate() {
            let Some(a) = *cell else { continue };
            let (row, col) = (flat / cols, flat % cols);
            if row + 1 < g.rows {
                if let Some(b) = g.cells[flat + cols] {
                    best = best.max(dist(a, b));
                }
            }
            let mut stride = 1;
            for (axis, &len) in g.dir_shape.iter().enumerate().rev() {
                let idx = (col / stride) % len;
                let periodic = axis + 1 == g.dir_shape.len();
                if len > 1 && (idx + 1 < len || periodic) {
                    let next = if idx + 1 < len { col + stride } else { col + stride - len * stride };
                    if let Some(b) = g.cells[row * cols + next] {
                        best = best.max(dist(a, b));
                    }
                }
                stride *= len;
            }
        }
    }
    best
}
