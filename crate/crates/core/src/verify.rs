//! Numerical verification of the assembled approximate solutions.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::ambient::{conformal_factor, ChartVector};
use crate::assembler::{
    assemble, unit_from_angles, Assembly, BlockId, Construction, Parametric, RegionKind, Sampling,
    SurfaceSample,
};
use crate::blocks::{
    catenoid_jacobi, catenoid_linearized_apply, catenoid_normal, clifford_linearized_apply, sphere_linearized_apply,
    JacobiKind,
};
use crate::error::{arg, Error, Result};
use crate::quadrature::integrate;

/// Embedding step for the curvature oracles, in units of the natural scale
/// of each coordinate.
const EMBED_STEP: f64 = 1e-3;
const OPERATOR_STEP: f64 = 1e-4;

/// Mean curvature of a parametrised hypersurface by central differences.
///
/// `embed` maps parameters to `R^D`. With `on_sphere` the surface lies in the
/// unit sphere and the normal is taken tangent to it. `normal_hint` fixes the
/// orientation only; it must not lie in the tangent span.
pub fn fd_mean_curvature<E: Fn(&[f64]) -> DVector<f64>>(
    embed: E,
    u: &[f64],
    h: f64,
    on_sphere: bool,
    normal_hint: &DVector<f64>,
) -> Result<f64> {
    fd_shape(embed, u, h, on_sphere, normal_hint).map(|(hm, _)| hm)
}

/// Mean curvature and unit normal by central differences.
fn fd_shape<E: Fn(&[f64]) -> DVector<f64>>(
    embed: E,
    u: &[f64],
    h: f64,
    on_sphere: bool,
    normal_hint: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let d = u.len();
    let at = |du: &[(usize, f64)]| {
        let mut v = u.to_vec();
        for &(k, t) in du {
            v[k] += t;
        }
        embed(&v)
    };
    let x = embed(u);
    let tangents: Vec<DVector<f64>> =
        (0..d).map(|i| (at(&[(i, h)]) - at(&[(i, -h)])) / (2.0 * h)).collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut span = tangents.clone();
    if on_sphere {
        span.push(x.clone());
    }
    for v in span {
        let mut w = v;
        for b in &basis {
            let c = w.dot(b);
            w -= b * c;
        }
        let nw = w.norm();
        if nw < 1e-12 {
            return Err(Error::Singular("degenerate parametrisation".into()));
        }
        basis.push(w / nw);
    }
    let mut normal = normal_hint.clone();
    for b in &basis {
        let c = normal.dot(b);
        normal -= b * c;
    }
    let nn = normal.norm();
    if nn < 1e-8 {
        return Err(Error::Singular("normal hint lies in the tangent space".into()));
    }
    normal /= nn;
    let metric = DMatrix::from_fn(d, d, |i, j| tangents[i].dot(&tangents[j]));
    let second = DMatrix::from_fn(d, d, |i, j| {
        let xx = if i == j {
            (at(&[(i, h)]) - &x * 2.0 + at(&[(i, -h)])) / (h * h)
        } else {
            (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h)
        };
        xx.dot(&normal)
    });
    let inv = metric
        .try_inverse()
        .ok_or_else(|| Error::Singular("induced metric is not invertible".into()))?;
    Ok(((inv * second).trace(), normal))
}

// ---------------------------------------------------------------------------
// Mean curvature

/// Analytic mean curvature of a sample, recomputed from its coordinates.
pub fn mean_curvature_at(asm: &Assembly, sample: &SurfaceSample) -> Result<f64> {
    asm.mean_curvature(&sample.region, &sample.parametric)
}

/// Independent finite-difference mean curvature of a sample.
///
/// Exterior samples are differentiated in the ambient space. Neck and
/// transition samples are differentiated in their chart, where the surface
/// is resolved at its own scale, and converted with the conformal factor.
/// Coordinates are rescaled so one step is `EMBED_STEP` of the local feature
/// size, and two step sizes are combined by Richardson extrapolation.
pub fn fd_sample_mean_curvature(asm: &Assembly, sample: &SurfaceSample) -> Result<f64> {
    let u0 = sample.parametric.coords();
    let mut scale = vec![1.0; u0.len()];
    if let Parametric::Transition { r, .. } = sample.parametric {
        scale[0] = r;
    }
    let shifted = |xi: &[f64]| -> Vec<f64> { u0.iter().zip(xi).zip(&scale).map(|((u, x), s)| u + x * s).collect() };
    let zero = vec![0.0; u0.len()];
    let h = EMBED_STEP;
    match sample.region.kind {
        RegionKind::Exterior => {
            let hint = asm.inward_hint(sample)?;
            let failed = std::cell::Cell::new(None);
            let embed = |xi: &[f64]| match asm.embed_coords(sample, &shifted(xi)) {
                Ok(x) => x,
                Err(e) => {
                    failed.set(Some(e));
                    DVector::zeros(sample.ambient.len())
                }
            };
            // Near a neck the Green's function varies on the scale of the
            // chart radius, so the step shrinks with it.
            let h = h * (sample.tube_distance / 0.1).min(1.0);
            let a = fd_mean_curvature(&embed, &zero, h, true, &hint)?;
            let b = fd_mean_curvature(&embed, &zero, 0.5 * h, true, &hint)?;
            match failed.into_inner() {
                Some(e) => Err(e),
                None => Ok((4.0 * b - a) / 3.0),
            }
        }
        RegionKind::Neck | RegionKind::Transition => {
            let BlockId::Neck(_) = sample.region.block else {
                return arg("neck sample without a neck block");
            };
            let y = asm.chart_point(&sample.region, &sample.parametric)?;
            let hint: DVector<f64> = match &sample.parametric {
                Parametric::Neck { s, angles } => {
                    DVector::from_vec(catenoid_normal(asm.n(), *s, &unit_from_angles(angles)).iter().copied().collect())
                }
                _ => {
                    let mut v = DVector::zeros(asm.n() + 1);
                    v[0] = f64::from(sample.region.side.unwrap_or(1));
                    v
                }
            };
            let failed = std::cell::Cell::new(None);
            let embed = |xi: &[f64]| match asm.chart_coords(sample, &shifted(xi)) {
                Ok(c) => DVector::from_vec(c.to_vec()),
                Err(e) => {
                    failed.set(Some(e));
                    DVector::zeros(asm.n() + 1)
                }
            };
            let (ha, na) = fd_shape(&embed, &zero, h, false, &hint)?;
            let (hb, _) = fd_shape(&embed, &zero, 0.5 * h, false, &hint)?;
            if let Some(e) = failed.into_inner() {
                return Err(e);
            }
            let h0 = (4.0 * hb - ha) / 3.0;
            let yv = y.to_vec();
            let sn: f64 = yv.iter().zip(na.iter()).map(|(a, b)| a * b).sum();
            // `h0` is taken against the normal itself, so the conformal
            // correction enters with a plus sign.
            Ok(conformal_factor(&y) * h0 + asm.n() as f64 * sn)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionMaxima {
    pub neck: f64,
    pub transition: f64,
    pub exterior: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub delta: f64,
    /// Weighted sup norm of `H − H_target` with weight exponent `δ − 2`.
    pub norm: f64,
    /// The same norm restricted to each region.
    pub regions: RegionMaxima,
    /// Unweighted `max |H − H_target|`.
    pub sup: f64,
    pub h_target: f64,
    pub eps: f64,
    pub rho: f64,
    pub samples: usize,
}

/// Admissible weight exponents: `δ ∈ (−1, 0)` for `n = 2`, `(2 − n, 0)` above.
pub fn check_delta(n: usize, delta: f64) -> Result<()> {
    let lo = if n == 2 { -1.0 } else { 2.0 - n as f64 };
    if delta > lo && delta < 0.0 {
        Ok(())
    } else {
        arg(format!("delta = {delta} outside the admissible range ({lo}, 0) for n = {n}"))
    }
}

pub fn error_norm(asm: &Assembly, delta: f64) -> Result<CurvatureReport> {
    check_delta(asm.n(), delta)?;
    if asm.samples.is_empty() {
        return arg("the assembly has no samples");
    }
    let field: Vec<f64> = asm.samples.iter().map(|s| s.analytic_h - asm.h_target).collect();
    let norm = asm.weighted_sup_norm(&field, delta - 2.0)?;
    let mut regions = RegionMaxima { neck: 0.0, transition: 0.0, exterior: 0.0 };
    for kind in [RegionKind::Neck, RegionKind::Transition, RegionKind::Exterior] {
        let masked: Vec<f64> =
            asm.samples.iter().zip(&field).map(|(s, f)| if s.region.kind == kind { *f } else { 0.0 }).collect();
        let v = asm.weighted_sup_norm(&masked, delta - 2.0)?;
        match kind {
            RegionKind::Neck => regions.neck = v,
            RegionKind::Transition => regions.transition = v,
            RegionKind::Exterior => regions.exterior = v,
        }
    }
    let sup = field.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let rho = asm.necks.iter().map(|k| k.rho).fold(0.0, f64::max);
    Ok(CurvatureReport {
        delta,
        norm,
        regions,
        sup,
        h_target: asm.h_target,
        eps: asm.neck_solve.eps,
        rho,
        samples: asm.samples.len(),
    })
}

// ---------------------------------------------------------------------------
// Flux

/// Generator `V(X) = X_i e_j − X_j e_i` of the rotations in the `(i, j)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KillingField {
    pub i: usize,
    pub j: usize,
}

impl KillingField {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(x.len());
        v[self.j] = x[self.i];
        v[self.i] = -x[self.j];
        v
    }
}

/// Cross-sectional sphere `y¹ = b̄`, `|ŷ| = ε̄` of a neck, swept through an
/// angle `span` of its last direction angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossSection {
    pub neck: usize,
    pub span: f64,
}

impl CrossSection {
    pub fn waist(neck: usize) -> Self {
        Self { neck, span: 2.0 * PI }
    }
}

/// Directional derivative of the inverse chart at `y` along `v`.
fn unproject_derivative(y: &ChartVector, v: &[f64]) -> DVector<f64> {
    let yv = y.to_vec();
    let d = 1.0 + y.norm_sq();
    let yv_dot: f64 = yv.iter().zip(v).map(|(a, b)| a * b).sum();
    let mut out = DVector::zeros(yv.len() + 1);
    out[0] = -4.0 * yv_dot / (d * d);
    for k in 0..yv.len() {
        out[k + 1] = 2.0 * v[k] / d - 4.0 * yv[k] * yv_dot / (d * d);
    }
    out
}

/// `∫ f(Θ) dΘ` over `S^{k}` in hyperspherical angles; `res` trapezoid nodes
/// on the periodic angle, Gauss–Legendre panels on the polar ones.
fn sphere_integral<F: Fn(&[f64]) -> f64 + Sync>(k: usize, res: usize, f: &F) -> f64 {
    fn rec<F: Fn(&[f64]) -> f64>(prefix: &mut Vec<f64>, k: usize, res: usize, f: &F) -> f64 {
        let i = prefix.len();
        if i + 1 == k {
            let step = 2.0 * PI / res as f64;
            let mut acc = 0.0;
            for t in 0..res {
                prefix.push(step * t as f64);
                acc += f(&unit_from_angles(prefix));
                prefix.pop();
            }
            return acc * step;
        }
        let power = (k - 1 - i) as i32;
        integrate(
            |a| {
                let mut p = prefix.clone();
                p.push(a);
                a.sin().powi(power) * rec(&mut p, k, res, f)
            },
            0.0,
            PI,
            PI / 4.0,
        )
    }
    rec(&mut Vec::new(), k, res, f)
}

/// First variation flux `∫_c ⟨ν, V⟩ − H ∫_Q ⟨N, V⟩` through a neck waist,
/// with `Q` the flat chart disk `y¹ = b̄`, `|ŷ| ≤ ε̄`, and `ν`, `N` both the
/// unit pushforward of `e₁`.
pub fn flux_integral(asm: &Assembly, section: &CrossSection, field: &KillingField, res: usize) -> Result<f64> {
    let n = asm.n();
    let Some(neck) = asm.necks.get(section.neck) else {
        return arg(format!("no neck {}", section.neck));
    };
    if (section.span - 2.0 * PI).abs() > 1e-12 {
        return arg("open cross-section: the flux needs a closed waist sphere");
    }
    let dim = n + 2;
    if field.i >= dim || field.j >= dim || field.i == field.j {
        return arg(format!("Killing field plane ({}, {}) invalid in R^{dim}", field.i, field.j));
    }
    if res < 4 {
        return arg("flux quadrature needs at least 4 nodes");
    }
    let mut e1 = vec![0.0; n + 1];
    e1[0] = 1.0;
    let pairing = |y: &ChartVector| -> f64 {
        let a = conformal_factor(y);
        let x = neck.to_ambient(y);
        let nu = &neck.placement * unproject_derivative(y, &e1) * a;
        nu.dot(&field.apply(&x))
    };
    let at = |r: f64, th: &[f64]| ChartVector::new(neck.b_bar, th.iter().map(|t| r * t).collect());
    let eb = neck.eps_bar;
    let m = (n - 1) as i32;
    let waist = sphere_integral(n - 1, res, &|th: &[f64]| {
        let y = at(eb, th);
        pairing(&y) * (eb / conformal_factor(&y)).powi(m)
    });
    let disk = integrate(
        |r| {
            sphere_integral(n - 1, res, &|th: &[f64]| {
                let y = at(r, th);
                pairing(&y) * r.powi(m) / conformal_factor(&y).powi(n as i32)
            })
        },
        0.0,
        eb,
        eb,
    );
    Ok(waist - asm.h_target * disk)
}

// ---------------------------------------------------------------------------
// Balancing

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub sigma: Vec<f64>,
    /// Axial flux through each neck waist along the first geodesic.
    pub flux: Vec<f64>,
    /// `flux_k / ε̄_k^{n−1}`.
    pub flux_per_scale: Vec<f64>,
    /// Largest relative deviation of `flux_per_scale` from its mean.
    pub flux_spread: f64,
    /// `B̊_j = flux_j − flux_{j−1}` for the free displacements.
    pub b_ring: Vec<f64>,
    /// `ω (ε̄_j^{n−1} − ε̄_{j−1}^{n−1})` with `ω` the mean of `flux_per_scale`.
    pub b_from_scales: Vec<f64>,
    pub omega_flux: f64,
    pub eps: f64,
}

fn balance_assembly(asm: &Assembly) -> Result<()> {
    if asm.params.construction != Construction::TwoGeodesic {
        return arg(format!("balancing needs the two_geodesic construction, got {}", asm.params.construction));
    }
    Ok(())
}

const AXIAL: KillingField = KillingField { i: 0, j: 1 };
const FLUX_RES: usize = 64;

fn free_sigma(asm: &Assembly) -> Vec<f64> {
    let free = (asm.n_spheres - 2) / 4;
    let s = &asm.params.sigma;
    if s.len() == free {
        s.clone()
    } else if s.len() == asm.n_spheres {
        s[1..=free].to_vec()
    } else {
        vec![0.0; free]
    }
}

pub fn balancing_map(asm: &Assembly) -> Result<BalanceReport> {
    balance_assembly(asm)?;
    let n = asm.n();
    let big_n = asm.n_spheres;
    let flux = (0..big_n)
        .into_par_iter()
        .map(|k| flux_integral(asm, &CrossSection::waist(k), &AXIAL, FLUX_RES))
        .collect::<Result<Vec<_>>>()?;
    let scale: Vec<f64> = (0..big_n).map(|k| asm.necks[k].eps_bar.powi(n as i32 - 1)).collect();
    let per: Vec<f64> = flux.iter().zip(&scale).map(|(f, s)| f / s).collect();
    let omega = per.iter().sum::<f64>() / per.len() as f64;
    let spread = per.iter().fold(0.0f64, |a, p| a.max((p - omega).abs())) / omega.abs();
    let free = (big_n - 2) / 4;
    let b_ring = (1..=free).map(|j| flux[j] - flux[j - 1]).collect();
    let b_from_scales = (1..=free).map(|j| omega * (scale[j] - scale[j - 1])).collect();
    Ok(BalanceReport {
        sigma: free_sigma(asm),
        flux,
        flux_per_scale: per,
        flux_spread: spread,
        b_ring,
        b_from_scales,
        omega_flux: omega,
        eps: asm.neck_solve.eps,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeStructure {
    /// `∂B̊_i / ∂σ_j` by central differences.
    pub matrix: Vec<Vec<f64>>,
    /// Same with half the step; the two agree when the differences converge.
    pub matrix_half_step: Vec<Vec<f64>>,
    pub fd_consistency: f64,
    /// Least squares fit of `matrix` to `ω · (cyclic superdiagonal ones)`.
    pub omega: f64,
    /// Largest entry of `matrix − ω · pattern`.
    pub pattern_residual: f64,
    pub det_scaled: f64,
    pub invertible: bool,
    pub step: f64,
}

fn b_ring_at(asm: &Assembly, sigma: &[f64]) -> Result<Vec<f64>> {
    let mut p = asm.params.clone();
    p.sigma = sigma.to_vec();
    p.sampling = Sampling::Skeleton;
    Ok(balancing_map(&assemble(&p)?)?.b_ring)
}

/// Cyclic superdiagonal pattern `P_{i, i+1 mod F} = 1`.
pub fn cyclic_pattern(f: usize) -> DMatrix<f64> {
    DMatrix::from_fn(f, f, |i, j| if j == (i + 1) % f { 1.0 } else { 0.0 })
}

pub fn balancing_derivative_structure(asm: &Assembly) -> Result<DerivativeStructure> {
    balance_assembly(asm)?;
    let sigma = free_sigma(asm);
    let f = sigma.len();
    if f == 0 {
        return arg("no free displacements for N < 6");
    }
    let step = 1e-4 * asm.tau;
    let jac = |h: f64| -> Result<DMatrix<f64>> {
        let cols = (0..f)
            .into_par_iter()
            .map(|j| {
                let mut sp = sigma.clone();
                let mut sm = sigma.clone();
                sp[j] += h;
                sm[j] -= h;
                let (bp, bm) = (b_ring_at(asm, &sp)?, b_ring_at(asm, &sm)?);
                Ok(bp.iter().zip(&bm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(f, f, |i, j| cols[j][i]))
    };
    let d = jac(step)?;
    let d_half = jac(0.5 * step)?;
    let scale = d.amax().max(f64::MIN_POSITIVE);
    let fd_consistency = (&d - &d_half).amax() / scale;
    let pat = cyclic_pattern(f);
    let omega = d.dot(&pat) / pat.dot(&pat);
    let pattern_residual = (&d - &pat * omega).amax();
    let det_scaled = if omega != 0.0 { (&d / omega).determinant() } else { 0.0 };
    let to_rows = |m: &DMatrix<f64>| (0..f).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok(DerivativeStructure {
        matrix: to_rows(&d),
        matrix_half_step: to_rows(&d_half),
        fd_consistency,
        omega,
        pattern_residual,
        det_scaled,
        invertible: d.determinant().abs() > 1e-12 * scale.powi(f as i32),
        step,
    })
}

// ---------------------------------------------------------------------------
// Jacobi fields

#[derive(Debug, Clone, Serialize)]
pub struct JacobiEntry {
    pub block: String,
    pub field: String,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobiReport {
    pub entries: Vec<JacobiEntry>,
    pub max_residual: f64,
}

fn fd3<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> (f64, f64, f64) {
    let (p, c, m) = (f(x + h), f(x), f(x - h));
    (c, (p - m) / (2.0 * h), (p - 2.0 * c + m) / (h * h))
}

/// Laplacian on the unit `S^k` of `f`, through its degree-zero extension.
fn sphere_laplacian<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>, h: f64) -> f64 {
    let ext = |y: &DVector<f64>| f(&(y / y.norm()));
    let c = ext(x);
    (0..x.len())
        .map(|a| {
            let mut p = x.clone();
            let mut m = x.clone();
            p[a] += h;
            m[a] -= h;
            (ext(&p) - 2.0 * c + ext(&m)) / (h * h)
        })
        .sum()
}

/// Richardson-extrapolated [`sphere_laplacian`]. The torus operator scales
/// the Laplacians by up to `1/cos²α`, which at step `1e-4` lifts roundoff
/// above `1e-7`; a coarser fourth-order stencil keeps both errors small.
fn sphere_laplacian_fine<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>) -> f64 {
    let h = 10.0 * OPERATOR_STEP;
    (4.0 * sphere_laplacian(f, x, 0.5 * h) - sphere_laplacian(f, x, h)) / 3.0
}

/// Residuals of the known Jacobi fields of `S_α`, the catenoid and the
/// Clifford torus `T^{n1,n2}_α` under the respective linearised operators.
pub fn jacobi_residual_suite(n: usize, alpha: f64, n1: usize, n2: usize) -> Result<JacobiReport> {
    if n < 2 || n1 == 0 || n2 == 0 {
        return arg("need n >= 2 and n1, n2 >= 1");
    }
    if !(alpha > 0.0 && alpha < PI / 2.0) {
        return arg(format!("alpha = {alpha} outside (0, pi/2)"));
    }
    let h = OPERATOR_STEP;
    let nf = n as f64;
    let mut entries = Vec::new();
    let grid = |a: f64, b: f64, k: usize| (0..k).map(move |i| a + (b - a) * i as f64 / (k - 1) as f64);

    // Coordinates restricted to S_α: cos μ along the axis, sin μ Θ^k across it.
    let mut axial = 0.0f64;
    let mut transverse = 0.0f64;
    for mu in grid(0.1, PI - 0.1, 200) {
        let (u, du, d2u) = fd3(f64::cos, mu, h);
        axial = axial.max(sphere_linearized_apply(n, alpha, mu, u, du, d2u).abs());
        let (u, du, d2u) = fd3(f64::sin, mu, h);
        let angular = -(nf - 1.0) * u / mu.sin().powi(2);
        let v = sphere_linearized_apply(n, alpha, mu, u, du, d2u) + angular / alpha.sin().powi(2);
        transverse = transverse.max(v.abs());
    }
    entries.push(JacobiEntry { block: "sphere".into(), field: "x^0".into(), residual: axial });
    entries.push(JacobiEntry { block: "sphere".into(), field: "x^k".into(), residual: transverse });

    for kind in JacobiKind::ALL {
        let mut worst = 0.0f64;
        for s in grid(-3.0, 3.0, 301) {
            let (u, du, d2u) = fd3(|t| catenoid_jacobi(n, kind, t, 1.0), s, h);
            let v = catenoid_linearized_apply(n, s, u, du, d2u, kind.angular_mode() as i64)?;
            worst = worst.max(v.abs());
        }
        entries.push(JacobiEntry { block: "catenoid".into(), field: format!("{kind:?}"), residual: worst });
    }

    // Products of coordinates of the two factors, at pseudo-random points.
    let point = |k: usize, seed: usize| {
        let v = DVector::from_fn(k + 1, |i, _| ((seed * 7 + i * 13) as f64 * 0.7).sin() + 0.3);
        &v / v.norm()
    };
    for a in 0..=n1 {
        for b in 0..=n2 {
            let mut worst = 0.0f64;
            for seed in 0..20 {
                let (x1, x2) = (point(n1, seed), point(n2, seed + 100));
                let f1 = |x: &DVector<f64>| x[a];
                let f2 = |x: &DVector<f64>| x[b];
                let u = x1[a] * x2[b];
                let lap1 = sphere_laplacian_fine(&f1, &x1) * x2[b];
                let lap2 = sphere_laplacian_fine(&f2, &x2) * x1[a];
                let v = clifford_linearized_apply(n1, n2, alpha, u, lap1, lap2);
                worst = worst.max(v.abs());
            }
            entries.push(JacobiEntry { block: "torus".into(), field: format!("x1^{a} x2^{b}"), residual: worst });
        }
    }
    let max_residual = entries.iter().fold(0.0f64, |a, e| a.max(e.residual));
    Ok(JacobiReport { entries, max_residual })
}

// ---------------------------------------------------------------------------
// Integrity

/// Blocks a sample belongs to for overlap purposes.
fn owner(s: &SurfaceSample) -> BlockId {
    s.region.block
}

/// Blocks that may legitimately touch: the same block, a neck and a block it
/// is glued to, and two blocks glued to a common block.
fn adjacency(asm: &Assembly) -> HashMap<BlockId, Vec<BlockId>> {
    let mut direct: HashMap<BlockId, Vec<BlockId>> = HashMap::new();
    for (j, nk) in asm.necks.iter().enumerate() {
        for f in [&nk.lower, &nk.upper] {
            direct.entry(BlockId::Neck(j)).or_default().push(f.block());
            direct.entry(f.block()).or_default().push(BlockId::Neck(j));
        }
    }
    let mut out: HashMap<BlockId, Vec<BlockId>> = HashMap::new();
    for (b, ns) in &direct {
        let e = out.entry(*b).or_default();
        e.push(*b);
        for m in ns {
            e.push(*m);
            e.extend(direct.get(m).into_iter().flatten().copied());
        }
        e.sort();
        e.dedup();
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddednessReport {
    pub embedded: bool,
    /// Smallest distance between samples of non-adjacent blocks.
    pub min_separation: f64,
    /// `2 ×` the mesh edge; separations below it count as contact.
    pub threshold: f64,
    pub closest_blocks: Option<(BlockId, BlockId)>,
}

struct BlockCloud {
    id: BlockId,
    points: Vec<DVector<f64>>,
    centre: DVector<f64>,
    radius: f64,
}

pub fn embeddedness_check(asm: &Assembly) -> Result<EmbeddednessReport> {
    if asm.samples.is_empty() {
        return arg("embeddedness needs a sampled assembly");
    }
    let mut by_block: HashMap<BlockId, Vec<DVector<f64>>> = HashMap::new();
    for s in &asm.samples {
        by_block.entry(owner(s)).or_default().push(s.ambient.clone());
    }
    let mut clouds: Vec<BlockCloud> = by_block
        .into_iter()
        .map(|(id, points)| {
            let mut centre = DVector::zeros(points[0].len());
            for p in &points {
                centre += p;
            }
            centre /= points.len() as f64;
            let radius = points.iter().map(|p| (p - &centre).norm()).fold(0.0, f64::max);
            BlockCloud { id, points, centre, radius }
        })
        .collect();
    clouds.sort_by_key(|c| c.id);
    let adj = adjacency(asm);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..clouds.len() {
        for b in a + 1..clouds.len() {
            if adj.get(&clouds[a].id).is_some_and(|v| v.contains(&clouds[b].id)) {
                continue;
            }
            let lower = (&clouds[a].centre - &clouds[b].centre).norm() - clouds[a].radius - clouds[b].radius;
            pairs.push((lower, a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best = f64::INFINITY;
    let mut closest = None;
    for (lower, a, b) in pairs {
        if lower >= best {
            break;
        }
        let tree = KdTree::new(&clouds[b].points);
        let d = clouds[a].points.par_iter().map(|p| tree.nearest(p)).reduce(|| f64::INFINITY, f64::min);
        if d < best {
            best = d;
            closest = Some((clouds[a].id, clouds[b].id));
        }
    }
    let threshold = 2.0 * asm.mesh_edge;
    // A single closed chain has no non-adjacent blocks at all.
    let min_separation = if best.is_finite() { best } else { 2.0 };
    Ok(EmbeddednessReport { embedded: min_separation > threshold, min_separation, threshold, closest_blocks: closest })
}

/// Balanced kd-tree over sample points for nearest neighbour queries.
///
/// Samples crowd into the necks at density far above the mesh edge, so a
/// uniform grid degenerates there; median splits adapt to it.
pub struct KdTree<'a> {
    points: &'a [DVector<f64>],
    /// Point indices, arranged so every node owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, below: usize, above: usize },
}

const KD_LEAF: usize = 8;

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [DVector<f64>]) -> Self {
        let mut tree = Self { points, order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= KD_LEAF {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let dim = self.points[0].len();
        let spread = |a: usize| {
            let (lo, hi) = self.order[start..end]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &i| (l.min(self.points[i][a]), h.max(self.points[i][a])));
            hi - lo
        };
        let axis = (0..dim).max_by(|&a, &b| spread(a).total_cmp(&spread(b))).unwrap_or(0);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| pts[i][axis].total_cmp(&pts[j][axis]));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start, end });
        let below = self.build(start, mid);
        let above = self.build(mid, end);
        self.nodes[id] = KdNode::Split { axis, value, below, above };
        id
    }

    /// Distance to the nearest stored point; infinite for an empty tree.
    pub fn nearest(&self, q: &DVector<f64>) -> f64 {
        let mut best_sq = f64::INFINITY;
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best_sq);
        }
        best_sq.sqrt()
    }

    fn search(&self, node: usize, q: &DVector<f64>, best_sq: &mut f64) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d: f64 = self.points[i].iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    *best_sq = best_sq.min(d);
                }
            }
            KdNode::Split { axis, value, below, above } => {
                let off = q[axis] - value;
                let (near, far) = if off < 0.0 { (below, above) } else { (above, below) };
                self.search(near, q, best_sq);
                if off * off < *best_sq {
                    self.search(far, q, best_sq);
                }
            }
        }
    }
}

/// One-sided sampled Hausdorff distance from `transform` applied to the
/// samples back to the samples.
pub fn symmetry_check(asm: &Assembly, transform: &DMatrix<f64>) -> Result<f64> {
    let dim = asm.n() + 2;
    if transform.shape() != (dim, dim) {
        return arg(format!("transform must be {dim} x {dim}"));
    }
    if (transform.transpose() * transform - DMatrix::identity(dim, dim)).amax() > 1e-9 {
        return arg("transform is not orthogonal");
    }
    if asm.samples.is_empty() {
        return arg("symmetry check needs a sampled assembly");
    }
    let points: Vec<DVector<f64>> = asm.samples.iter().map(|s| s.ambient.clone()).collect();
    let tree = KdTree::new(&points);
    Ok(points.par_iter().map(|p| tree.nearest(&(transform * p))).reduce(|| 0.0, f64::max))
}
