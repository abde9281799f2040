//! Asymptotic matching of perturbed hyperspheres with catenoidal necks.
//!
//! In the chart centred at a gap midpoint the trailing sphere's near face is
//! the graph `y¹ = G_ε(|ŷ|) ≈ −tan(τ/4) − |ŷ|²/2r + ε^{n−1} C_n |ŷ|^{2−n}/(n−2)`
//! and the lower sheet of the neck is `−ε̄ F(|ŷ|/ε̄)`. Matching the
//! `|ŷ|^{2−n}` (or `log|ŷ|`) coefficients fixes `ε̄` in terms of `ε`, and
//! matching constants fixes `ε` in terms of `τ`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::ambient::ChartVector;
use crate::blocks::{catenoid_constant, green_function, matched_sphere_alpha, minimal_clifford_alpha, opposite_alpha};
use crate::error::{arg, Error, Result};
use crate::quadrature::bisect;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeckGeometryParams {
    /// Radius of the chart image of `S_α`.
    pub r: f64,
    /// Distance of its centre from the chart origin.
    pub d: f64,
}

pub fn neck_geometry_params(alpha: f64, tau: f64) -> Result<NeckGeometryParams> {
    check_alpha_tau(alpha, tau)?;
    let den = alpha.cos() + (alpha + 0.5 * tau).cos();
    if den <= 0.0 {
        return Err(Error::Singular(format!(
            "sphere image degenerates: cos(alpha) + cos(alpha + tau/2) = {den}"
        )));
    }
    Ok(NeckGeometryParams { r: alpha.sin() / den, d: (alpha + 0.5 * tau).sin() / den })
}

fn check_alpha_tau(alpha: f64, tau: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= FRAC_PI_2) {
        return arg(format!("alpha = {alpha} outside (0, pi/2]"));
    }
    if !(tau >= 0.0) {
        return arg(format!("tau = {tau} must be non-negative"));
    }
    Ok(())
}

/// Chart image of the point at polar angle `mu` on the sphere of angular
/// radius `a` centred at `e_0`, in the chart centred at angle `b` on the
/// `(x^0, x^1)` geodesic.
pub fn sphere_image(a: f64, b: f64, mu: f64, theta: &[f64]) -> ChartVector {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sm, cm) = mu.sin_cos();
    let den = 1.0 + cb * ca + sb * sa * cm;
    ChartVector {
        y1: (-sb * ca + cb * sa * cm) / den,
        yhat: theta.iter().map(|t| sa * sm * t / den).collect(),
    }
}

/// `|ŷ|` of [`sphere_image`].
pub fn sphere_image_radius(a: f64, b: f64, mu: f64) -> f64 {
    a.sin() * mu.sin() / (1.0 + b.cos() * a.cos() + b.sin() * a.sin() * mu.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionConstants {
    /// Coefficient `C_n` of `ε^{n−1}|ŷ|^{2−n}/(n−2)` (or of `−ε log|ŷ|` when `n = 2`).
    pub big_c: f64,
    /// Constant term `c_2` multiplying `ε` when `n = 2`.
    pub small_c2: Option<f64>,
}

/// Constants of the expansion of `G_ε`.
pub fn expansion_constants(n: usize, alpha: f64, tau: f64) -> Result<ExpansionConstants> {
    neck_geometry_params(alpha, tau)?;
    let q = (0.25 * tau).cos().powi(2);
    let slope = 2.0 * q / alpha.sin();
    let big_c = 1.0 / (2.0 * q * slope.powi(n as i32 - 2));
    let small_c2 = (n == 2).then(|| -(1.0 + (q / alpha.sin()).ln()) / (2.0 * q));
    Ok(ExpansionConstants { big_c, small_c2 })
}

/// Normal push `ε^{n−1}(G − 2cos²(τ/4) b cos μ)` applied to `S_α`.
pub fn sphere_perturbation(n: usize, tau: f64, eps: f64, b: f64, mu: f64) -> Result<f64> {
    let kappa = 2.0 * (0.25 * tau).cos().powi(2);
    Ok(eps.powi(n as i32 - 1) * (green_function(n, mu)? - kappa * b * mu.cos()))
}

/// Polar angle on the perturbed sphere whose chart image has `|ŷ| = yhat_norm`.
pub fn invert_sphere_radius(n: usize, alpha: f64, tau: f64, eps: f64, b: f64, yhat_norm: f64) -> Result<f64> {
    let c = alpha + 0.5 * tau;
    let rel = |mu: f64| -> f64 {
        match sphere_perturbation(n, tau, eps, b, mu) {
            Ok(p) => sphere_image_radius(alpha + p, c, mu) - yhat_norm,
            Err(_) => f64::NAN,
        }
    };
    let guess = 2.0 * (0.25 * tau).cos().powi(2) / alpha.sin() * yhat_norm;
    let mut lo = (0.5 * guess).max(2.0 * crate::blocks::POLE_MARGIN);
    let mut hi = (2.0 * guess).min(FRAC_PI_2);
    for _ in 0..40 {
        let (flo, fhi) = (rel(lo), rel(hi));
        if flo.is_finite() && fhi.is_finite() && flo < 0.0 && fhi > 0.0 {
            return bisect(rel, lo, hi, 1e-15 * hi);
        }
        if !(flo < 0.0) {
            lo = (0.5 * lo).max(2.0 * crate::blocks::POLE_MARGIN);
        }
        if !(fhi > 0.0) {
            hi = (1.5 * hi).min(PI - 2.0 * crate::blocks::POLE_MARGIN);
        }
    }
    Err(Error::Infeasible(format!(
        "|y| = {yhat_norm} is outside the region where the sphere graph is invertible"
    )))
}

/// `y¹` of the near face of the perturbed trailing sphere over `|ŷ|`.
pub fn perturbed_sphere_graph(n: usize, alpha: f64, tau: f64, eps: f64, b: f64, yhat_norm: f64) -> Result<f64> {
    let mu = invert_sphere_radius(n, alpha, tau, eps, b, yhat_norm)?;
    let a = alpha + sphere_perturbation(n, tau, eps, b, mu)?;
    let c = alpha + 0.5 * tau;
    let den = a.cos() + c.cos();
    let (r, d) = (a.sin() / den, c.sin() / den);
    let disc = r * r - yhat_norm * yhat_norm;
    if disc < 0.0 {
        return Err(Error::Infeasible(format!("|y| = {yhat_norm} exceeds the sphere image radius")));
    }
    Ok(-d + disc.sqrt())
}

/// Leading terms of `G_ε` (including the translation term `−ε^{n−1} b`).
pub fn sphere_expansion(n: usize, alpha: f64, tau: f64, eps: f64, b: f64, y: f64) -> Result<f64> {
    let NeckGeometryParams { r, .. } = neck_geometry_params(alpha, tau)?;
    let k = expansion_constants(n, alpha, tau)?;
    let base = -(0.25 * tau).tan() - y * y / (2.0 * r) - eps.powi(n as i32 - 1) * b;
    Ok(base
        + match k.small_c2 {
            Some(c2) => eps * (c2 - k.big_c * y.ln()),
            None => eps.powi(n as i32 - 1) * k.big_c / ((n - 2) as f64 * y.powi(n as i32 - 2)),
        })
}

/// Leading terms of the upper sheet `ε̄ F(|ŷ|/ε̄)` of the scaled catenoid.
pub fn catenoid_expansion(n: usize, eps_bar: f64, y: f64) -> f64 {
    if n == 2 {
        return eps_bar * (2.0 / eps_bar).ln() + eps_bar * y.ln() - eps_bar.powi(3) / (4.0 * y * y);
    }
    let nf = n as f64;
    eps_bar * catenoid_constant(n)
        - eps_bar.powi(n as i32 - 1) / ((nf - 2.0) * y.powf(nf - 2.0))
        - eps_bar.powi(3 * n as i32 - 3) / (2.0 * (3.0 * nf - 4.0) * y.powf(3.0 * nf - 4.0))
}

/// `ρ_ε = ε^{(3n−3)/(3n−2)}`.
pub fn truncation_radius(n: usize, eps: f64) -> f64 {
    let nf = n as f64;
    eps.powf((3.0 * nf - 3.0) / (3.0 * nf - 2.0))
}

/// Neck scale `ε̄` matched to spheres perturbed at scale `eps`.
pub fn neck_scale(n: usize, eps: f64, big_c: f64) -> f64 {
    if n == 2 {
        eps * big_c
    } else {
        eps * big_c.powf(1.0 / (n - 1) as f64)
    }
}

/// Per-neck defect `T_{nk}`: the constant-term mismatch left for the `b` system.
pub fn neck_defect(n: usize, alpha: f64, tau_k: f64, eps: f64) -> Result<f64> {
    let k = expansion_constants(n, alpha, tau_k)?;
    let eb = neck_scale(n, eps, k.big_c);
    let t = (0.25 * tau_k).tan();
    Ok(match k.small_c2 {
        Some(c2) => t - eps * c2 - eb * (2.0 / eb).ln(),
        None => t - eb * catenoid_constant(n),
    })
}

/// Sphere scale `ε` for equally spaced spheres with gap `τ`.
pub fn solve_scale(n: usize, alpha: f64, tau: f64) -> Result<f64> {
    if n < 2 {
        return arg("dimension n must be at least 2");
    }
    if !(tau > 0.0) {
        return arg(format!("tau = {tau} must be positive"));
    }
    let k = expansion_constants(n, alpha, tau)?;
    if k.big_c <= 0.0 {
        return Err(Error::Infeasible("expansion constant C_n is not positive".into()));
    }
    if n >= 3 {
        return Ok((0.25 * tau).tan() / (catenoid_constant(n) * k.big_c.powf(1.0 / (n - 1) as f64)));
    }
    let upper = n2_branch_end(alpha, &[tau])?;
    let f = |eps: f64| neck_defect(2, alpha, tau, eps).unwrap_or(f64::NAN);
    if !(f(upper) < 0.0) {
        return Err(Error::Infeasible(format!(
            "tau = {tau} too large: no small root of the n = 2 scale equation"
        )));
    }
    bisect(f, 1e-12 * upper, upper, 1e-14 * upper)
}

/// Largest `ε` on the branch where every `T_{2k}` decreases in `ε`.
fn n2_branch_end(alpha: f64, taus: &[f64]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for &t in taus {
        let k = expansion_constants(2, alpha, t)?;
        let q = (0.25 * t).cos().powi(2);
        let l = (q / alpha.sin()).ln();
        best = best.min(2.0 * (-2.0 - l).exp() / k.big_c);
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct NeckSolve {
    pub eps: f64,
    pub eps_k: Vec<f64>,
    pub b_k: Vec<f64>,
    pub eps_bar_k: Vec<f64>,
    pub b_bar_k: Vec<f64>,
    pub tau_k: Vec<f64>,
    pub defect_k: Vec<f64>,
    pub residual: f64,
}

/// Displacements obeying the chain symmetry, from the free values
/// `σ_1, …, σ_{⌊(N−2)/4⌋}`.
pub fn symmetric_sigma(n_spheres: usize, free: &[f64]) -> Result<Vec<f64>> {
    if n_spheres < 4 || n_spheres % 2 != 0 {
        return arg(format!("chain length N = {n_spheres} must be even and at least 4"));
    }
    let nf = (n_spheres - 2) / 4;
    if free.len() != nf {
        return arg(format!("N = {n_spheres} has {nf} free displacements, got {}", free.len()));
    }
    let h = n_spheres / 2;
    let mut s = vec![0.0; n_spheres];
    for (i, &v) in free.iter().enumerate() {
        let k = i + 1;
        s[k] = v;
        s[h - k] = -v;
        s[h + k] = v;
        s[n_spheres - k] = -v;
    }
    Ok(s)
}

/// Whether `sigma` obeys the chain symmetry within `tol`.
pub fn sigma_is_symmetric(sigma: &[f64], tol: f64) -> bool {
    let n = sigma.len();
    if n < 4 || n % 2 != 0 {
        return false;
    }
    let free: Vec<f64> = (1..=(n - 2) / 4).map(|k| sigma[k]).collect();
    match symmetric_sigma(n, &free) {
        Ok(s) => s.iter().zip(sigma).all(|(a, b)| (a - b).abs() <= tol),
        Err(_) => false,
    }
}

/// Gaps `τ_k = τ + σ_{k+1} − σ_k` with indices mod `N`.
pub fn gaps(tau: f64, sigma: &[f64]) -> Vec<f64> {
    let n = sigma.len();
    (0..n).map(|k| tau + sigma[(k + 1) % n] - sigma[k]).collect()
}

/// The `2N × 2N` matrix acting on `(b_0..b_{N−1}, b̄_0..b̄_{N−1})`.
///
/// Rows `0..N` are `b̄_k + ε^{n−1}(b_{k+1} + b_k)/2`, rows `N..2N` are
/// `ε^{n−1}(b_{k+1} − b_k)/2`.
pub fn neck_system_matrix(n: usize, eps: f64, n_spheres: usize) -> DMatrix<f64> {
    let w = 0.5 * eps.powi(n as i32 - 1);
    let m = n_spheres;
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    for k in 0..m {
        let k1 = (k + 1) % m;
        a[(k, m + k)] = 1.0;
        a[(k, k1)] += w;
        a[(k, k)] += w;
        a[(m + k, k1)] += w;
        a[(m + k, k)] -= w;
    }
    a
}

/// Right-hand side `(0, T)` of the neck system.
pub fn neck_system_rhs(defects: &[f64]) -> DVector<f64> {
    let m = defects.len();
    DVector::from_fn(2 * m, |i, _| if i < m { 0.0 } else { defects[i - m] })
}

/// `‖A x − rhs‖_∞` for the neck system.
pub fn neck_system_residual(n: usize, eps: f64, b: &[f64], b_bar: &[f64], defects: &[f64]) -> f64 {
    let m = b.len();
    let a = neck_system_matrix(n, eps, m);
    let x = DVector::from_iterator(2 * m, b.iter().chain(b_bar).copied());
    (a * x - neck_system_rhs(defects)).amax()
}

pub fn solve_neck_system(n: usize, alpha: f64, tau: f64, sigma: &[f64]) -> Result<NeckSolve> {
    solve_neck_system_with_offsets(n, alpha, tau, sigma, &vec![(0.0, 0.0); sigma.len()])
}

/// Outward chart displacement of a face whose sphere carries an extra
/// normal push `value · ε^{n−1}` at the pole.
fn face_offset(n: usize, eps: f64, tau_k: f64, value: f64) -> f64 {
    value * eps.powi(n as i32 - 1) / (2.0 * (0.25 * tau_k).cos().powi(2))
}

/// Neck system for spheres whose faces are pushed outwards beyond the plain
/// Green's function perturbation, as on spheres with more than two necks.
/// `offsets[k]` holds the extra normal push, in units of `ε^{n−1}`, of the
/// lower and upper face of neck `k`. The mean push widens the gap the neck
/// must bridge; the difference recentres the neck.
pub fn solve_neck_system_with_offsets(
    n: usize,
    alpha: f64,
    tau: f64,
    sigma: &[f64],
    offsets: &[(f64, f64)],
) -> Result<NeckSolve> {
    if !sigma_is_symmetric(sigma, 1e-15) {
        return arg("displacements violate the chain symmetry");
    }
    let m = sigma.len();
    if offsets.len() != m {
        return arg(format!("{} face offsets for {m} necks", offsets.len()));
    }
    let tau_k = gaps(tau, sigma);
    if let Some(t) = tau_k.iter().find(|t| **t <= 0.0) {
        return Err(Error::Infeasible(format!("neighbouring spheres overlap: tau_k = {t}")));
    }
    let consts: Vec<ExpansionConstants> =
        tau_k.iter().map(|&t| expansion_constants(n, alpha, t)).collect::<Result<_>>()?;
    let widening = |eps: f64, k: usize| {
        let (lo, up) = offsets[k];
        0.5 * (face_offset(n, eps, tau_k[k], lo) + face_offset(n, eps, tau_k[k], up))
    };
    let eps = if n >= 3 {
        let lhs: f64 = tau_k.iter().map(|t| (0.25 * t).tan()).sum();
        let p = 1.0 / (n - 1) as f64;
        let slope = catenoid_constant(n) * consts.iter().map(|k| k.big_c.powf(p)).sum::<f64>();
        // The widening is O(ε^{n−1}), so the iteration contracts for small ε.
        let mut eps = lhs / slope;
        for _ in 0..100 {
            let next = (lhs + (0..m).map(|k| widening(eps, k)).sum::<f64>()) / slope;
            let done = (next - eps).abs() <= 1e-16 * eps;
            eps = next;
            if done {
                break;
            }
        }
        eps
    } else {
        let upper = n2_branch_end(alpha, &tau_k)?;
        let total = |e: f64| -> f64 {
            (0..m).map(|k| neck_defect(2, alpha, tau_k[k], e).unwrap_or(f64::NAN) + widening(e, k)).sum()
        };
        if !(total(upper) < 0.0) {
            return Err(Error::Infeasible("no small root of the n = 2 scale equation".into()));
        }
        bisect(total, 1e-12 * upper, upper, 1e-14 * upper)?
    };
    let defect_k: Vec<f64> = (0..m)
        .map(|k| Ok(neck_defect(n, alpha, tau_k[k], eps)? + widening(eps, k)))
        .collect::<Result<_>>()?;
    let centre_k: Vec<f64> = (0..m)
        .map(|k| 0.5 * (face_offset(n, eps, tau_k[k], offsets[k].1) - face_offset(n, eps, tau_k[k], offsets[k].0)))
        .collect();
    let w = 0.5 * eps.powi(n as i32 - 1);
    // ΣT = 0 holds up to roundoff; centring makes the chain close exactly.
    let mean = defect_k.iter().sum::<f64>() / m as f64;
    let mut b_k = vec![0.0; m];
    for k in 0..m - 1 {
        b_k[k + 1] = b_k[k] + (defect_k[k] - mean) / w;
    }
    let b_bar_k: Vec<f64> = (0..m).map(|k| centre_k[k] - w * (b_k[(k + 1) % m] + b_k[k])).collect();
    let shifted: Vec<f64> = b_bar_k.iter().zip(&centre_k).map(|(b, c)| b - c).collect();
    let residual = neck_system_residual(n, eps, &b_k, &shifted, &defect_k);
    if residual > 1e-10 {
        return Err(Error::NoConvergence(format!("neck system residual {residual:e}")));
    }
    Ok(NeckSolve {
        eps,
        eps_k: vec![eps; m],
        b_k,
        eps_bar_k: consts.iter().map(|k| neck_scale(n, eps, k.big_c)).collect(),
        b_bar_k,
        tau_k,
        defect_k,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClosureResult {
    /// Number of spheres around the geodesic; `None` when nothing closes.
    pub n_spheres: Option<usize>,
    /// Winding number.
    pub m: Option<usize>,
    pub exact: bool,
}

/// Smallest `N ≤ n_max` with `|2α + τ − 2πm/N| ≤ tol` and `gcd(m, N) = 1`.
pub fn closure_check(alpha: f64, tau: f64, tol: f64, n_max: usize) -> ClosureResult {
    let step = 2.0 * alpha + tau;
    for n in 1..=n_max {
        let m = (step * n as f64 / (2.0 * PI)).round() as usize;
        if m == 0 || gcd(m, n) != 1 {
            continue;
        }
        let err = (step - 2.0 * PI * m as f64 / n as f64).abs();
        if err <= tol {
            return ClosureResult { n_spheres: Some(n), m: Some(m), exact: err <= 1e-12 };
        }
    }
    ClosureResult { n_spheres: None, m: None, exact: false }
}

pub fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HandleMode {
    Handle,
    Doubling,
}

/// Which of `α`, `τ` is given; the other is solved for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HandleTarget {
    Alpha(f64),
    Tau(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HandleParams {
    pub alpha: f64,
    pub tau: f64,
    pub alpha_hat: f64,
    pub alpha_bar: Option<f64>,
    pub n_spheres: usize,
    pub m: usize,
    pub residual: f64,
}

/// `2Nα̂ + (N+1)τ − rhs(α) − 2mπ` with `rhs = 2α` (handle) or `ᾱ − α` (doubling).
pub fn handle_residual(n1: usize, n2: usize, alpha: f64, tau: f64, n_spheres: usize, m: usize, mode: HandleMode) -> Result<f64> {
    let nf = n_spheres as f64;
    let hat = matched_sphere_alpha(n1, n2, alpha);
    let rhs = match mode {
        HandleMode::Handle => 2.0 * alpha,
        HandleMode::Doubling => opposite_alpha(n1, n2, alpha)? - alpha,
    };
    Ok(2.0 * nf * hat + (nf + 1.0) * tau - rhs - 2.0 * m as f64 * PI)
}

pub fn handle_parameters(
    n1: usize,
    n2: usize,
    target: HandleTarget,
    n_spheres: usize,
    m: usize,
    mode: HandleMode,
) -> Result<HandleParams> {
    if n1 == 0 || n2 == 0 || n_spheres == 0 {
        return arg("n1, n2 and N must be positive");
    }
    // Through the necks the torus inherits the spheres' inward normal, which
    // points away from the sphere chain. The torus then has the spheres' mean
    // curvature only on one side of the minimal torus: α ≥ α* for a handle
    // (chain towards the x₁ core) and α ≤ α* for a doubling.
    let star = minimal_clifford_alpha(n1, n2);
    let (lo, hi) = match mode {
        HandleMode::Handle => (star, FRAC_PI_2),
        HandleMode::Doubling => (0.0, star),
    };
    let (alpha, tau) = match target {
        HandleTarget::Alpha(alpha) => {
            if !(alpha > 0.0 && alpha < FRAC_PI_2) {
                return arg(format!("alpha = {alpha} outside (0, pi/2)"));
            }
            if alpha < lo - 1e-12 || alpha > hi + 1e-12 {
                return Err(Error::Infeasible(format!(
                    "alpha = {alpha} gives the torus the opposite mean curvature to the spheres in {mode:?} mode; need alpha in [{lo}, {hi}]"
                )));
            }
            let r0 = handle_residual(n1, n2, alpha, 0.0, n_spheres, m, mode)?;
            let tau = -r0 / (n_spheres as f64 + 1.0);
            if !(tau > 0.0) {
                return Err(Error::Infeasible(format!("required gap tau = {tau} is not positive")));
            }
            (alpha, tau)
        }
        HandleTarget::Tau(tau) => {
            if !(tau > 0.0) {
                return arg(format!("tau = {tau} must be positive"));
            }
            let f = |a: f64| handle_residual(n1, n2, a, tau, n_spheres, m, mode).unwrap_or(f64::NAN);
            let grid = 1000;
            let pts: Vec<f64> = (1..grid).map(|i| lo + (hi - lo) * i as f64 / grid as f64).collect();
            let bracket = pts.windows(2).find(|w| f(w[0]).signum() != f(w[1]).signum());
            let Some(w) = bracket else {
                return Err(Error::Infeasible(format!(
                    "no alpha in ({lo}, {hi}) closes N = {n_spheres}, m = {m} at tau = {tau}"
                )));
            };
            (bisect(f, w[0], w[1], 1e-15)?, tau)
        }
    };
    let residual = handle_residual(n1, n2, alpha, tau, n_spheres, m, mode)?;
    Ok(HandleParams {
        alpha,
        tau,
        alpha_hat: matched_sphere_alpha(n1, n2, alpha),
        alpha_bar: match mode {
            HandleMode::Handle => None,
            HandleMode::Doubling => Some(opposite_alpha(n1, n2, alpha)?),
        },
        n_spheres,
        m,
        residual,
    })
}

#[cfg(test)]
mod tests;
