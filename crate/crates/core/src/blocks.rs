//! The three building blocks: affine hyperspheres and their normal graphs,
//! generalized catenoids, and generalized Clifford tori.
//!
//! Second fundamental forms follow `B(X, Y) = <D_X Y, N>`; the mean curvature
//! is the trace of `B` against the induced metric.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::ambient::AmbientVector;
use crate::error::{arg, Error, Result};
use crate::quadrature::{bisect, integrate};

/// Smallest admissible distance of `mu` from the poles of `S^n`.
pub const POLE_MARGIN: f64 = 1e-6;

const PANEL: f64 = 0.05;

// ---------------------------------------------------------------------------
// Hyperspheres

/// `(cos α, sin α cos μ, sin α sin μ Θ)`.
pub fn sphere_point(alpha: f64, mu: f64, theta: &[f64]) -> AmbientVector {
    let (sa, ca) = alpha.sin_cos();
    let (sm, cm) = mu.sin_cos();
    let mut x = DVector::zeros(theta.len() + 2);
    x[0] = ca;
    x[1] = sa * cm;
    for (k, t) in theta.iter().enumerate() {
        x[k + 2] = sa * sm * t;
    }
    x
}

pub fn sphere_mean_curvature(n: usize, alpha: f64) -> Result<f64> {
    if alpha < 1e-8 {
        return Err(Error::Divergence(format!("n cot(alpha) diverges at alpha = {alpha}")));
    }
    if alpha > FRAC_PI_2 + 1e-12 {
        return arg(format!("alpha = {alpha} exceeds pi/2"));
    }
    Ok(n as f64 / alpha.tan())
}

/// Point of `S^n ⊂ R^{n+1}` with polar angle `mu` about `e_0` and orthonormal
/// tangent frame `(e_mu, e_2, ..)`. The frame spans `T S^n` at that point.
pub fn sphere_frame(mu: f64, theta: &[f64]) -> (DVector<f64>, Vec<DVector<f64>>) {
    let n = theta.len();
    let (sm, cm) = mu.sin_cos();
    let mut p = DVector::zeros(n + 1);
    p[0] = cm;
    let mut e_mu = DVector::zeros(n + 1);
    e_mu[0] = -sm;
    for k in 0..n {
        p[k + 1] = sm * theta[k];
        e_mu[k + 1] = cm * theta[k];
    }
    let mut frame = vec![e_mu];
    let th = DVector::from_column_slice(theta);
    let mut basis: Vec<DVector<f64>> = vec![th.clone()];
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        for b in &basis {
            let c = v.dot(b);
            v -= b * c;
        }
        let nv = v.norm();
        if nv > 1e-8 {
            basis.push(v / nv);
        }
    }
    for b in basis.into_iter().skip(1) {
        let mut e = DVector::zeros(n + 1);
        e.rows_mut(1, n).copy_from(&b);
        frame.push(e);
    }
    (p, frame)
}

#[derive(Debug, Clone)]
pub struct GraphGeometryAt {
    pub metric: DMatrix<f64>,
    pub normal: AmbientVector,
    pub second_form: DMatrix<f64>,
    pub mean_curvature: f64,
}

/// Geometry of the normal graph `(cos(α+F), sin(α+F) p)` over `S_α` at the base
/// point `p = (cos μ, sin μ Θ)`.
///
/// `grad_f` and `hess_f` are components in the orthonormal frame returned by
/// [`sphere_frame`]; `hess_f` is the covariant Hessian of the round metric.
pub fn normal_graph_geometry(
    n: usize,
    alpha: f64,
    f: f64,
    grad_f: &[f64],
    hess_f: &DMatrix<f64>,
    mu: f64,
    theta: &[f64],
) -> Result<GraphGeometryAt> {
    if grad_f.len() != n || hess_f.shape() != (n, n) || theta.len() != n {
        return arg("normal graph inputs must have dimension n");
    }
    let (s, c) = (alpha + f).sin_cos();
    if s <= 0.0 {
        return Err(Error::Singular(format!(
            "graph leaves the hemisphere: sin(alpha + F) = {s}"
        )));
    }
    let g = DVector::from_column_slice(grad_f);
    let gg = g.norm_squared();
    let a2 = s * s + gg;
    let a = a2.sqrt();
    let id = DMatrix::<f64>::identity(n, n);
    let metric = &g * g.transpose() + &id * (s * s);
    let second_form = (hess_f * (-s) + &g * g.transpose() * (2.0 * c) + &id * (s * s * c)) / a;
    let lap = hess_f.trace();
    let hgg = (g.transpose() * hess_f * &g)[(0, 0)];
    let mean_curvature = (-lap + n as f64 * s * c + (hgg + c * s * gg) / a2) / (a * s);

    let (p, frame) = sphere_frame(mu, theta);
    let mut normal = DVector::zeros(n + 2);
    normal[0] = s * s;
    let mut spatial = -(p * (c * s));
    for (k, e) in frame.iter().enumerate() {
        spatial += e * grad_f[k];
    }
    normal.rows_mut(1, n + 1).copy_from(&spatial);
    Ok(GraphGeometryAt { metric, normal: normal / a, second_form, mean_curvature })
}

// ---------------------------------------------------------------------------
// Green's function of the linearized operator on S_α

fn green_integrand(m: f64, sigma: f64) -> f64 {
    let t = sigma - FRAC_PI_2;
    if t.abs() < 1e-4 {
        return 0.5 * m + (0.25 * m + 0.125 * m * m) * t * t;
    }
    let half = (0.5 * t).sin();
    let log_sin = (-2.0 * half * half).ln_1p();
    let one_minus = -(m * log_sin).exp_m1();
    let st = t.sin();
    one_minus / (st * st * (m * log_sin).exp())
}

const GREEN_PANEL: f64 = 0.1;
const GREEN_MAX_N: usize = 32;

/// `∫_{π/2}^{μ} (1 − sin^{n−1}σ)/(cos²σ sin^{n−1}σ) dσ` for `μ ≤ π/2`.
///
/// Integrated in `log σ`: a cached running sum over fixed panels down to the
/// pole margin, plus one partial panel ending at `log μ`.
fn green_integral(n: usize, mu: f64) -> f64 {
    let m = (n - 1) as f64;
    let upper = FRAC_PI_2.ln();
    let f = move |u: f64| { let x = u.exp(); green_integrand(m, x) * x };
    let u = mu.ln();
    if n >= GREEN_MAX_N {
        return -integrate(f, u, upper, GREEN_PANEL);
    }
    static CACHE: [OnceLock<Vec<f64>>; GREEN_MAX_N] = [const { OnceLock::new() }; GREEN_MAX_N];
    let sums = CACHE[n].get_or_init(|| {
        let count = ((upper - (0.5 * POLE_MARGIN).ln()) / GREEN_PANEL).ceil() as usize + 1;
        let mut acc = vec![0.0; count];
        for k in 1..count {
            let hi = upper - GREEN_PANEL * (k - 1) as f64;
            acc[k] = acc[k - 1] + integrate(f, hi - GREEN_PANEL, hi, GREEN_PANEL);
        }
        acc
    });
    // Node `k` sits at `upper − k·PANEL ≥ u`.
    let k = (((upper - u) / GREEN_PANEL).floor() as usize).min(sums.len() - 1);
    let node = upper - GREEN_PANEL * k as f64;
    -(sums[k] + integrate(f, u, node, GREEN_PANEL))
}

fn check_green_args(n: usize, mu: f64) -> Result<()> {
    if n < 2 {
        return arg("dimension n must be at least 2");
    }
    if !(POLE_MARGIN..=std::f64::consts::PI - POLE_MARGIN).contains(&mu) {
        return arg(format!("mu = {mu} too close to a pole"));
    }
    Ok(())
}

pub fn green_function(n: usize, mu: f64) -> Result<f64> {
    Ok(green_with_derivative(n, mu)?.0)
}

/// `(G(μ), G'(μ))` with `G'` differentiated under the integral.
pub fn green_with_derivative(n: usize, mu: f64) -> Result<(f64, f64)> {
    check_green_args(n, mu)?;
    let (x, sign) = if mu > FRAC_PI_2 { (std::f64::consts::PI - mu, -1.0) } else { (mu, 1.0) };
    let (sx, cx) = x.sin_cos();
    let i = green_integral(n, x);
    let g = -sx - cx * i;
    let dg = -cx + sx * i - cx * green_integrand((n - 1) as f64, x);
    Ok((g, sign * dg))
}

/// Leading term of `G` as `μ → 0`.
pub fn green_asymptotics(n: usize, mu: f64) -> f64 {
    match n {
        2 => -1.0 + 2f64.ln() - mu.ln(),
        _ => 1.0 / ((n - 2) as f64 * mu.powi(n as i32 - 2)),
    }
}

/// Order `p` of the remainder `G − green_asymptotics = O(μ^p)` (logarithmic
/// factors dropped).
pub fn green_remainder_order(n: usize) -> f64 {
    match n {
        2 => 2.0,
        3 => 1.0,
        4 => 0.0,
        _ => 4.0 - n as f64,
    }
}

/// `sin^{-2}α (u'' + (n−1) cot μ u' + n u)` for axisymmetric `u(μ)`.
pub fn sphere_linearized_apply(n: usize, alpha: f64, mu: f64, u: f64, du: f64, d2u: f64) -> f64 {
    let nf = n as f64;
    (d2u + (nf - 1.0) / mu.tan() * du + nf * u) / alpha.sin().powi(2)
}

// ---------------------------------------------------------------------------
// Generalized catenoid

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatenoidProfile {
    pub phi: f64,
    pub psi: f64,
    pub dphi: f64,
    pub dpsi: f64,
}

/// `φ = cosh((n−1)s)^{1/(n−1)}` and `ψ = ∫_0^s φ^{2−n}`.
pub fn catenoid_profile(n: usize, s: f64) -> CatenoidProfile {
    let m = (n - 1) as f64;
    let phi_of = |t: f64| (m * t).cosh().powf(1.0 / m);
    let phi = phi_of(s);
    let psi = if n == 2 {
        s
    } else {
        integrate(|t| phi_of(t).powf(2.0 - n as f64), 0.0, s, PANEL)
    };
    CatenoidProfile {
        phi,
        psi,
        dphi: phi * (m * s).tanh(),
        dpsi: phi.powf(2.0 - n as f64),
    }
}

/// Euclidean embedding `ε (ψ(s), φ(s) Θ)` of the scaled catenoid in `R^{n+1}`.
pub fn catenoid_point(n: usize, eps: f64, s: f64, theta: &[f64]) -> DVector<f64> {
    let p = catenoid_profile(n, s);
    let mut x = DVector::zeros(n + 1);
    x[0] = eps * p.psi;
    for (k, t) in theta.iter().enumerate() {
        x[k + 1] = eps * p.phi * t;
    }
    x
}

/// Unit normal `(φ̇/φ) e_1 − φ^{1−n} Θ` of the catenoid.
pub fn catenoid_normal(n: usize, s: f64, theta: &[f64]) -> DVector<f64> {
    let p = catenoid_profile(n, s);
    let mut v = DVector::zeros(n + 1);
    v[0] = p.dphi / p.phi;
    let w = p.phi.powf(1.0 - n as f64);
    for (k, t) in theta.iter().enumerate() {
        v[k + 1] = -w * t;
    }
    v
}

/// `∫_1^x (σ^{2n−2} − 1)^{−1/2} dσ`, the catenoid as a graph over its axis.
pub fn catenoid_graph(n: usize, x: f64) -> Result<f64> {
    if n < 2 {
        return arg("dimension n must be at least 2");
    }
    if !(x >= 1.0) {
        return arg(format!("catenoid graph needs x >= 1, got {x}"));
    }
    if n == 2 {
        return Ok(x.acosh());
    }
    const SPLIT: f64 = 2.0;
    if x <= SPLIT {
        return Ok(graph_near_waist(n, x));
    }
    Ok(catenoid_constant(n) - graph_tail(n, x))
}

/// Substitution `σ = 1 + t²` removes the inverse square root at `σ = 1`.
fn graph_near_waist(n: usize, x: f64) -> f64 {
    let k = (2 * n - 2) as f64;
    let integrand = |t: f64| {
        if t == 0.0 {
            return 2.0 / k.sqrt();
        }
        2.0 * t / (k * (t * t).ln_1p()).exp_m1().sqrt()
    };
    integrate(integrand, 0.0, (x - 1.0).sqrt(), PANEL)
}

/// `∫_x^∞ (σ^{2n−2} − 1)^{−1/2} dσ` by the binomial series; needs `x > 1`, `n ≥ 3`.
fn graph_tail(n: usize, x: f64) -> f64 {
    let m2 = (2 * n - 2) as f64;
    let q = x.powf(-m2);
    let mut coef = 1.0;
    let mut pow = x.powf(2.0 - n as f64);
    let mut sum = 0.0;
    for k in 0..400 {
        let term = coef * pow / ((n - 2) as f64 + m2 * k as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        coef *= (2 * k + 1) as f64 / (2 * k + 2) as f64;
        pow *= q;
    }
    sum
}

/// `c_n = lim_{x→∞} catenoid_graph(n, x)` for `n ≥ 3`, cached per dimension.
pub fn catenoid_constant(n: usize) -> f64 {
    const MAX_N: usize = 32;
    static CACHE: [OnceLock<f64>; MAX_N] = [const { OnceLock::new() }; MAX_N];
    assert!((3..MAX_N).contains(&n), "catenoid constant defined for 3 <= n < {MAX_N}");
    *CACHE[n].get_or_init(|| graph_near_waist(n, 2.0) + graph_tail(n, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatenoidGeometry {
    /// Metric is `metric_factor · (ds² + g_{S^{n−1}})`.
    pub metric_factor: f64,
    /// `B = b_ss ds² + b_angular g_{S^{n−1}}`.
    pub b_ss: f64,
    pub b_angular: f64,
    pub norm_b: f64,
    pub norm_grad_b: f64,
    pub mean_curvature: f64,
}

pub fn catenoid_geometry(n: usize, eps: f64, s: f64) -> Result<CatenoidGeometry> {
    if !(eps > 0.0) {
        return arg(format!("catenoid scale must be positive, got {eps}"));
    }
    let nf = n as f64;
    let m = nf - 1.0;
    let phi = (m * s).cosh().powf(1.0 / m);
    let metric_factor = eps * eps * phi * phi;
    let w = eps * phi.powf(2.0 - nf);
    let (b_ss, b_angular) = ((1.0 - nf) * w, w);
    let c1 = (nf * m).sqrt();
    let c2 = nf * ((nf + 2.0) * m).sqrt();
    Ok(CatenoidGeometry {
        metric_factor,
        b_ss,
        b_angular,
        norm_b: c1 / (eps * phi.powf(nf)),
        norm_grad_b: c2 * (m * s).sinh().abs() / (eps * eps * phi.powf(2.0 * nf)),
        mean_curvature: (b_ss + m * b_angular) / metric_factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobiKind {
    /// Axial translation.
    J1,
    /// Translation in a direction orthogonal to the axis.
    Jk,
    /// Rotation mixing the axis with a transverse direction.
    J1k,
    /// Dilation.
    J0,
}

impl JacobiKind {
    pub const ALL: [JacobiKind; 4] = [JacobiKind::J1, JacobiKind::Jk, JacobiKind::J1k, JacobiKind::J0];

    /// Spherical harmonic degree of the angular factor.
    pub fn angular_mode(self) -> usize {
        match self {
            JacobiKind::J1 | JacobiKind::J0 => 0,
            JacobiKind::Jk | JacobiKind::J1k => 1,
        }
    }

    /// `+1` for even profiles in `s`, `−1` for odd ones.
    pub fn parity(self) -> f64 {
        match self {
            JacobiKind::J1 | JacobiKind::J1k => -1.0,
            JacobiKind::Jk | JacobiKind::J0 => 1.0,
        }
    }
}

/// Catenoid Jacobi field; `theta_k` is the angular factor `Θ^k` (ignored by
/// the rotationally symmetric kinds).
pub fn catenoid_jacobi(n: usize, kind: JacobiKind, s: f64, theta_k: f64) -> f64 {
    let p = catenoid_profile(n, s);
    let nf = n as f64;
    match kind {
        JacobiKind::J1 => p.dphi / p.phi,
        JacobiKind::Jk => -theta_k / p.phi.powf(nf - 1.0),
        JacobiKind::J1k => theta_k * (p.psi / p.phi.powf(nf - 1.0) + p.dphi),
        JacobiKind::J0 => p.psi * p.dphi / p.phi - p.phi.powf(2.0 - nf),
    }
}

/// `φ^{−n}∂_s(φ^{n−2}∂_s u) − λ φ^{−2} u + n(n−1) φ^{−2n} u` with `λ` the
/// `S^{n−1}` eigenvalue of the angular mode.
pub fn catenoid_linearized_apply(
    n: usize,
    s: f64,
    u: f64,
    du: f64,
    d2u: f64,
    angular_mode: i64,
) -> Result<f64> {
    if angular_mode < 0 {
        return arg(format!("angular mode must be non-negative, got {angular_mode}"));
    }
    let nf = n as f64;
    let l = angular_mode as f64;
    let lambda = l * (l + nf - 2.0);
    let m = nf - 1.0;
    let phi = (m * s).cosh().powf(1.0 / m);
    let ratio = (m * s).tanh();
    let p2 = phi * phi;
    Ok((d2u + (nf - 2.0) * ratio * du - lambda * u) / p2 + nf * m * u / phi.powf(2.0 * nf))
}

// ---------------------------------------------------------------------------
// Generalized Clifford tori

/// `n₂ cot α − n₁ tan α`.
pub fn clifford_mean_curvature(n1: usize, n2: usize, alpha: f64) -> f64 {
    n2 as f64 / alpha.tan() - n1 as f64 * alpha.tan()
}

/// `cos^{−2}α (Δ₁u + n₁u) + sin^{−2}α (Δ₂u + n₂u)` given the factor Laplacians.
pub fn clifford_linearized_apply(
    n1: usize,
    n2: usize,
    alpha: f64,
    u: f64,
    lap1: f64,
    lap2: f64,
) -> f64 {
    let (s, c) = alpha.sin_cos();
    (lap1 + n1 as f64 * u) / (c * c) + (lap2 + n2 as f64 * u) / (s * s)
}

/// Minimal Clifford torus parameter `arctan √(n₂/n₁)`.
pub fn minimal_clifford_alpha(n1: usize, n2: usize) -> f64 {
    (n2 as f64 / n1 as f64).sqrt().atan()
}

/// Radius parameter of the hypersphere whose mean curvature matches the
/// torus up to sign.
pub fn matched_sphere_alpha(n1: usize, n2: usize, alpha: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let h = (clifford_mean_curvature(n1, n2, alpha) / n).abs();
    1f64.atan2(h)
}

/// `ᾱ` with `H(ᾱ) = −H(α)`.
pub fn opposite_alpha(n1: usize, n2: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < FRAC_PI_2) {
        return arg(format!("alpha = {alpha} outside (0, pi/2)"));
    }
    let target = -clifford_mean_curvature(n1, n2, alpha);
    let root = bisect(
        |x| clifford_mean_curvature(n1, n2, x) - target,
        1e-15,
        FRAC_PI_2 - 1e-15,
        0.0,
    )?;
    // H is strictly decreasing, so one Newton step only polishes the last ulp.
    let (s, c) = root.sin_cos();
    let dh = -(n2 as f64) / (s * s) - n1 as f64 / (c * c);
    let newton = root - (clifford_mean_curvature(n1, n2, root) - target) / dh;
    let better = |x: f64| (clifford_mean_curvature(n1, n2, x) - target).abs();
    Ok(if better(newton) < better(root) { newton } else { root })
}

#[cfg(test)]
mod tests;
