//! Approximate solutions as region-labelled sample sets.
//!
//! Every block carries a placement `P ∈ O(n+2)`. A sphere block is the
//! normal graph of a perturbation `F` over `P S_α`; a neck block lives in the
//! stereographic chart of `P`, where its two sheets are blended into the
//! neighbouring faces over `ρ/2 ≤ |ŷ| ≤ 2ρ`. Mean curvature is taken with
//! the normal pointing into the spheres, so an unperturbed `S_α` has
//! `H = n cot α`.

mod build;
pub mod export;
pub mod group;


use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::ambient::{stereo_project, stereo_unproject, AmbientVector, ChartVector};
use crate::blocks::{catenoid_graph, catenoid_profile, green_with_derivative, normal_graph_geometry, sphere_frame, POLE_MARGIN};
use crate::error::{arg, Error, Result};
use crate::matching::{perturbed_sphere_graph, truncation_radius, NeckSolve};
use crate::quadrature::{bisect, d1, d2};

pub use build::{assemble, group_ambient};
pub use group::{group_condition_check, GroupCheck, GroupElement, GroupPreset};

// ---------------------------------------------------------------------------
// Parameters

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Delaunay,
    TwoGeodesic,
    Handle,
    Doubling,
}

impl FromStr for Construction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "delaunay" => Ok(Self::Delaunay),
            "two_geodesic" => Ok(Self::TwoGeodesic),
            "handle" => Ok(Self::Handle),
            "doubling" => Ok(Self::Doubling),
            _ => Err(Error::Config(format!("unknown construction {s:?}"))),
        }
    }
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Delaunay => "delaunay",
            Self::TwoGeodesic => "two_geodesic",
            Self::Handle => "handle",
            Self::Doubling => "doubling",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Blocks and matching data only.
    Skeleton,
    /// One meridian direction per block; axisymmetric constructions only.
    Profile,
    /// Full direction grids.
    Full,
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "skeleton" => Ok(Self::Skeleton),
            "profile" => Ok(Self::Profile),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown sampling mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssemblyParams {
    pub n: usize,
    pub construction: Construction,
    /// Sphere radius (delaunay, two_geodesic) or torus parameter (handle, doubling).
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    /// Free displacements, or the full list with one entry per sphere.
    pub sigma: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
    pub n_spheres: Option<usize>,
    pub m: Option<usize>,
    pub rho0: f64,
    pub resolution: usize,
    pub sampling: Sampling,
    /// Multiplies the solved sphere scale; `1` except in negative controls.
    pub eps_factor: f64,
    /// Reject displacements that break the chain symmetry.
    pub enforce_symmetry: bool,
    /// Generators of the doubling group.
    #[serde(skip)]
    pub group: Vec<GroupElement>,
    pub seed: u64,
}

impl AssemblyParams {
    pub fn new(construction: Construction, n: usize) -> Self {
        Self {
            n,
            construction,
            alpha: None,
            tau: None,
            sigma: Vec::new(),
            n1: 1,
            n2: n.saturating_sub(1).max(1),
            n_spheres: None,
            m: None,
            rho0: 0.1,
            resolution: 64,
            sampling: Sampling::Full,
            eps_factor: 1.0,
            enforce_symmetry: true,
            group: Vec::new(),
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Labels and samples

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockId {
    Sphere(usize),
    Neck(usize),
    Torus(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Neck,
    Transition,
    Exterior,
}

impl RegionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Neck => "neck",
            Self::Transition => "transition",
            Self::Exterior => "exterior",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sheet {
    Lower,
    Upper,
}

impl Sheet {
    /// `−1` for the lower sheet, `+1` for the upper one.
    pub fn side(self) -> i8 {
        match self {
            Sheet::Lower => -1,
            Sheet::Upper => 1,
        }
    }

    fn reflect(self) -> f64 {
        -f64::from(self.side())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegionLabel {
    pub kind: RegionKind,
    pub block: BlockId,
    pub side: Option<i8>,
}

/// Coordinates of a sample on its block. Angles are hyperspherical, see
/// [`unit_from_angles`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametric {
    /// Polar angle `μ` about the sphere axis and direction angles.
    Sphere { mu: f64, angles: Vec<f64> },
    Neck { s: f64, angles: Vec<f64> },
    /// Chart radius on a transition sheet.
    Transition { r: f64, angles: Vec<f64> },
    Torus { angles1: Vec<f64>, angles2: Vec<f64> },
}

impl Parametric {
    /// Flat coordinate vector used by finite-difference oracles.
    pub fn coords(&self) -> Vec<f64> {
        match self {
            Self::Sphere { mu: x, angles } | Self::Neck { s: x, angles } | Self::Transition { r: x, angles } => {
                std::iter::once(*x).chain(angles.iter().copied()).collect()
            }
            Self::Torus { angles1, angles2 } => angles1.iter().chain(angles2).copied().collect(),
        }
    }

    fn with_coords(&self, u: &[f64]) -> Self {
        match self {
            Self::Sphere { .. } => Self::Sphere { mu: u[0], angles: u[1..].to_vec() },
            Self::Neck { .. } => Self::Neck { s: u[0], angles: u[1..].to_vec() },
            Self::Transition { .. } => Self::Transition { r: u[0], angles: u[1..].to_vec() },
            Self::Torus { angles1, .. } => {
                let k = angles1.len();
                Self::Torus { angles1: u[..k].to_vec(), angles2: u[k..].to_vec() }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceSample {
    pub ambient: AmbientVector,
    pub region: RegionLabel,
    pub parametric: Parametric,
    /// `ζ_ε`.
    pub weight: f64,
    /// Chart distance to the axis near a neck; infinite far from all necks.
    pub tube_distance: f64,
    pub analytic_h: f64,
}

/// Row-major block of samples: `rows` values of the main parameter times a
/// direction grid of shape `dir_shape` (last axis periodic). Cells removed
/// near a neck are `None`.
#[derive(Debug, Clone, Serialize)]
pub struct SampleGrid {
    pub block: BlockId,
    pub kind: RegionKind,
    pub side: Option<i8>,
    pub rows: usize,
    pub dir_shape: Vec<usize>,
    pub cells: Vec<Option<usize>>,
}

impl SampleGrid {
    pub fn cols(&self) -> usize {
        self.dir_shape.iter().product()
    }
}

/// `Θ ∈ S^k` from `k` hyperspherical angles: `Θ_0 = cos a_0`,
/// `Θ_i = sin a_0 ⋯ sin a_{i−1} cos a_i`, `Θ_k = sin a_0 ⋯ sin a_{k−1}`.
pub fn unit_from_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len() + 1);
    let mut prod = 1.0;
    for a in angles {
        let (s, c) = a.sin_cos();
        out.push(prod * c);
        prod *= s;
    }
    out.push(prod);
    out
}

/// Angles of a fixed meridian direction, away from the coordinate singularities.
pub fn meridian_angles(k: usize) -> Vec<f64> {
    let mut a = vec![std::f64::consts::FRAC_PI_2; k];
    if let Some(last) = a.last_mut() {
        *last = 0.0;
    }
    a
}

// ---------------------------------------------------------------------------
// Cutoff and merged graph

fn bump_tail(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth monotone cutoff: `0` on `[0, 1/2]`, `1` on `[2, ∞)`.
pub fn cutoff_eta(s: f64) -> f64 {
    let a = bump_tail(s - 0.5);
    if a == 0.0 {
        return 0.0;
    }
    let b = bump_tail(2.0 - s);
    a / (a + b)
}

/// Lower sheet of a neck of scale `eps` blended into the near face of the
/// trailing sphere perturbed at scale `eps_sphere`.
pub fn merged_graph(
    n: usize,
    eps: f64,
    b_bar: f64,
    alpha: f64,
    tau: f64,
    eps_sphere: f64,
    b_sphere: f64,
    yhat_norm: f64,
) -> Result<f64> {
    if !(yhat_norm >= eps) {
        return Err(Error::Argument(format!(
            "|y| = {yhat_norm} lies inside the neck waist of radius {eps}"
        )));
    }
    let rho = truncation_radius(n, eps);
    let eta = cutoff_eta(yhat_norm / rho);
    let cat = if eta < 1.0 { b_bar - eps * catenoid_graph(n, yhat_norm / eps)? } else { 0.0 };
    let face = if eta > 0.0 {
        perturbed_sphere_graph(n, alpha, tau, eps_sphere, b_sphere, yhat_norm)?
    } else {
        0.0
    };
    Ok((1.0 - eta) * cat + eta * face)
}

// ---------------------------------------------------------------------------
// Sphere perturbations

/// `green · G(ν) + linear · cos ν`, with `ν` the angle to coordinate `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoleTerm {
    pub axis: usize,
    pub green: f64,
    pub linear: f64,
}

/// Normal graph function `F = amplitude · Σ terms` on `S^n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpherePerturbation {
    pub n: usize,
    pub amplitude: f64,
    pub terms: Vec<PoleTerm>,
}

impl SpherePerturbation {
    pub fn zero(n: usize) -> Self {
        Self { n, amplitude: 0.0, terms: Vec::new() }
    }

    pub fn is_axisymmetric(&self) -> bool {
        self.terms.iter().all(|t| t.axis == 0)
    }

    /// `(h, dh/dc, d²h/dc²)` of one term as a function of `c = cos ν`.
    fn term_profile(&self, t: &PoleTerm, p: &DVector<f64>) -> Result<(f64, f64, f64)> {
        let c = p[t.axis];
        let s = p.iter().enumerate().filter(|(i, _)| *i != t.axis).map(|(_, v)| v * v).sum::<f64>().sqrt();
        let mut out = (t.linear * c, t.linear, 0.0);
        if t.green != 0.0 {
            let nu = s.atan2(c);
            if !(POLE_MARGIN..=std::f64::consts::PI - POLE_MARGIN).contains(&nu) {
                return Err(Error::Singular(format!("perturbation evaluated at its pole (nu = {nu:e})")));
            }
            let (g, dg) = green_with_derivative(self.n, nu)?;
            let nf = self.n as f64;
            let d2g = -(nf - 1.0) * c / s * dg - nf * g;
            out.0 += t.green * g;
            out.1 -= t.green * dg / s;
            out.2 += t.green * (d2g * s - dg * c) / (s * s * s);
        }
        Ok(out)
    }

    pub fn value(&self, p: &DVector<f64>) -> Result<f64> {
        let mut f = 0.0;
        for t in &self.terms {
            f += self.term_profile(t, p)?.0;
        }
        Ok(self.amplitude * f)
    }

    /// Value and derivative along the curve `p(μ)` with velocity `v`.
    fn along(&self, p: &DVector<f64>, v: &DVector<f64>) -> Result<(f64, f64)> {
        let (mut f, mut df) = (0.0, 0.0);
        for t in &self.terms {
            let (h, dh, _) = self.term_profile(t, p)?;
            f += h;
            df += dh * v[t.axis];
        }
        Ok((self.amplitude * f, self.amplitude * df))
    }

    /// Value, gradient and covariant Hessian in the orthonormal tangent `frame`.
    pub fn jet(&self, p: &DVector<f64>, frame: &[DVector<f64>]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let n = frame.len();
        let (mut f, mut grad, mut hess) = (0.0, vec![0.0; n], DMatrix::zeros(n, n));
        for t in &self.terms {
            let (h, dh, d2h) = self.term_profile(t, p)?;
            let c = p[t.axis];
            f += h;
            for i in 0..n {
                let ai = frame[i][t.axis];
                grad[i] += dh * ai;
                for k in 0..n {
                    hess[(i, k)] += d2h * ai * frame[k][t.axis];
                }
                hess[(i, i)] -= dh * c;
            }
        }
        let a = self.amplitude;
        Ok((a * f, grad.into_iter().map(|g| a * g).collect(), hess * a))
    }
}

// ---------------------------------------------------------------------------
// Blocks

/// What a neck sheet is glued to.
#[derive(Debug, Clone, Serialize)]
pub enum FaceAttach {
    /// `map` sends polar coordinates about the face pole (in the chart frame)
    /// to the sphere's own coordinates; `offset` is the angle from the neck
    /// centre to the sphere centre.
    Sphere {
        sphere: usize,
        #[serde(skip)]
        map: DMatrix<f64>,
        offset: f64,
    },
    Torus { torus: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Face {
    pub attach: FaceAttach,
    /// Height depends on `|ŷ|` only.
    pub axisymmetric: bool,
}

impl Face {
    pub fn block(&self) -> BlockId {
        match self.attach {
            FaceAttach::Sphere { sphere, .. } => BlockId::Sphere(sphere),
            FaceAttach::Torus { torus } => BlockId::Torus(torus),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NeckBlock {
    #[serde(skip)]
    pub placement: DMatrix<f64>,
    pub eps_bar: f64,
    pub b_bar: f64,
    /// `ρ_ε` at this neck's scale.
    pub rho: f64,
    /// Angular gap `τ_k` between the two faces.
    pub gap: f64,
    pub lower: Face,
    pub upper: Face,
}

impl NeckBlock {
    pub fn face(&self, sheet: Sheet) -> &Face {
        match sheet {
            Sheet::Lower => &self.lower,
            Sheet::Upper => &self.upper,
        }
    }

    /// Waist parameter range `s ∈ [−s₊, s₊]` with `ε̄ φ(s₊) = ρ/2`.
    pub fn s_max(&self, n: usize) -> f64 {
        let m = (n - 1) as f64;
        (0.5 * self.rho / self.eps_bar).powf(m).acosh() / m
    }

    pub fn to_ambient(&self, y: &ChartVector) -> AmbientVector {
        &self.placement * stereo_unproject(y)
    }

    pub fn to_chart(&self, x: &AmbientVector) -> Result<ChartVector> {
        stereo_project(&(self.placement.transpose() * x))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SphereBlock {
    #[serde(skip)]
    pub placement: DMatrix<f64>,
    pub alpha: f64,
    pub perturbation: SpherePerturbation,
    /// Attached neck sheets.
    pub faces: Vec<(usize, Sheet)>,
}

impl SphereBlock {
    /// `P (cos(α+F), sin(α+F) p)`.
    pub fn point(&self, p: &DVector<f64>) -> Result<AmbientVector> {
        let a = self.alpha + self.perturbation.value(p)?;
        let mut x = DVector::zeros(p.len() + 1);
        x[0] = a.cos();
        x.rows_mut(1, p.len()).copy_from(&(p * a.sin()));
        Ok(&self.placement * x)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TorusBlock {
    pub alpha: f64,
    pub n1: usize,
    pub n2: usize,
    pub faces: Vec<(usize, Sheet)>,
}

impl TorusBlock {
    pub fn point(&self, u1: &[f64], u2: &[f64]) -> AmbientVector {
        let (s, c) = self.alpha.sin_cos();
        DVector::from_iterator(u1.len() + u2.len(), u1.iter().map(|v| c * v).chain(u2.iter().map(|v| s * v)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedSymmetry {
    pub name: String,
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assembly {
    pub params: AssemblyParams,
    pub neck_solve: NeckSolve,
    /// Radius of the sphere blocks.
    pub alpha_sphere: f64,
    pub tau: f64,
    pub n_spheres: usize,
    pub m: usize,
    /// `H` the approximate solution approximates.
    pub h_target: f64,
    pub spheres: Vec<SphereBlock>,
    pub necks: Vec<NeckBlock>,
    pub tori: Vec<TorusBlock>,
    #[serde(skip)]
    pub samples: Vec<SurfaceSample>,
    #[serde(skip)]
    pub grids: Vec<SampleGrid>,
    pub symmetries: Vec<NamedSymmetry>,
    #[serde(skip)]
    pub group: Vec<GroupElement>,
    /// `|M|`, the number of distinct arms of a doubling.
    pub orbit_size: usize,
    /// Largest distance between grid neighbours.
    pub mesh_edge: f64,
}

// ---------------------------------------------------------------------------
// Geometry evaluation

const NEWTON_ITERS: usize = 60;

/// Derivatives of `sin a sin μ / (1 + cos c cos a + sin c sin a cos μ)`.
fn image_radius_jet(a: f64, c: f64, mu: f64) -> (f64, f64, f64) {
    let (sa, ca) = a.sin_cos();
    let (sc, cc) = c.sin_cos();
    let (sm, cm) = mu.sin_cos();
    let den = 1.0 + cc * ca + sc * sa * cm;
    let num = sa * sm;
    let d_a = (ca * sm * den - num * (-cc * sa + sc * ca * cm)) / (den * den);
    let d_mu = (sa * cm * den + num * sc * sa * sm) / (den * den);
    (num / den, d_a, d_mu)
}

impl Assembly {
    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn block_count(&self) -> (usize, usize, usize) {
        (self.spheres.len(), self.necks.len(), self.tori.len())
    }

    /// Polar angle `μ` about the face pole, and the perturbed radius there,
    /// of the face point with chart radius `r` in direction `theta`.
    fn sphere_face_point(
        &self,
        sphere: &SphereBlock,
        map: &DMatrix<f64>,
        offset: f64,
        r: f64,
        theta: &[f64],
    ) -> Result<(f64, f64)> {
        let pert = &sphere.perturbation;
        let eval = |mu: f64| -> Result<(f64, f64, f64)> {
            let (sm, cm) = mu.sin_cos();
            let mut q = DVector::zeros(theta.len() + 1);
            let mut dq = DVector::zeros(theta.len() + 1);
            q[0] = cm;
            dq[0] = -sm;
            for (k, t) in theta.iter().enumerate() {
                q[k + 1] = sm * t;
                dq[k + 1] = cm * t;
            }
            let (f, df) = pert.along(&(map * q), &(map * dq))?;
            let a = sphere.alpha + f;
            let (rad, ra, rm) = image_radius_jet(a, offset, mu);
            Ok((rad - r, ra * df + rm, a))
        };
        // Unperturbed closed form of A sin μ − B cos μ = C.
        let (sa, ca) = sphere.alpha.sin_cos();
        let (sc, cc) = offset.sin_cos();
        let (aa, bb, cc2) = (sa, r * sc * sa, r * (1.0 + cc * ca));
        let amp = aa.hypot(bb);
        let mut mu = bb.atan2(aa) + (cc2 / amp).clamp(-1.0, 1.0).asin();
        let lo_bound = 2.0 * POLE_MARGIN;
        for _ in 0..NEWTON_ITERS {
            let Ok((f, df, a)) = eval(mu) else { break };
            if !(df.is_finite() && df > 0.0) {
                break;
            }
            let step = f / df;
            let next = mu - step;
            if !(next > lo_bound && next < std::f64::consts::FRAC_PI_2) {
                break;
            }
            mu = next;
            if step.abs() <= 1e-15 * mu {
                let _ = a;
                return Ok((mu, eval(mu)?.2));
            }
        }
        // Newton left the basin; the image radius is increasing on (0, π/2).
        let f = |m: f64| eval(m).map(|v| v.0).unwrap_or(f64::NAN);
        let mut hi = (4.0 * mu.abs()).clamp(10.0 * lo_bound, std::f64::consts::FRAC_PI_2);
        while !(f(hi) > 0.0) && hi < std::f64::consts::FRAC_PI_2 {
            hi = (2.0 * hi).min(std::f64::consts::FRAC_PI_2);
        }
        let root = bisect(f, lo_bound, hi, 1e-15 * hi)
            .map_err(|_| Error::Infeasible(format!("face point at |y| = {r} not found on the sphere")))?;
        Ok((root, eval(root)?.2))
    }

    /// `y¹` of a face at chart radius `r` and direction `theta`.
    pub fn face_height(&self, neck: &NeckBlock, sheet: Sheet, r: f64, theta: &[f64]) -> Result<f64> {
        match &neck.face(sheet).attach {
            FaceAttach::Sphere { sphere, map, offset } => {
                let sb = &self.spheres[*sphere];
                let (mu, a) = self.sphere_face_point(sb, map, *offset, r, theta)?;
                let (sa, ca) = a.sin_cos();
                let (sc, cc) = offset.sin_cos();
                let den = 1.0 + cc * ca + sc * sa * mu.cos();
                let y1 = (-sc * ca + cc * sa * mu.cos()) / den;
                Ok(match sheet {
                    Sheet::Lower => y1,
                    Sheet::Upper => -y1,
                })
            }
            FaceAttach::Torus { torus } => {
                let tb = &self.tori[*torus];
                let c2 = tb.alpha.cos().powi(2);
                let k = tb.n1 + 1;
                let g = |y1: f64| {
                    let y = ChartVector::new(y1, theta.iter().map(|t| r * t).collect());
                    let x = neck.to_ambient(&y);
                    x.rows(0, k).norm_squared() - c2
                };
                let t = (0.25 * neck.gap).tan();
                let far = 3.0 * t + 2.0 * r + 1e-3;
                let (lo, hi) = match sheet {
                    Sheet::Lower => (-far, 0.0),
                    Sheet::Upper => (0.0, far),
                };
                if g(lo).signum() == g(hi).signum() {
                    return Err(Error::Singular("torus face not bracketed in the neck chart".into()));
                }
                bisect(g, lo, hi, 1e-16)
            }
        }
    }

    /// Height `y¹` of a neck sheet at chart radius `r ≥ ε̄`.
    pub fn sheet_height(&self, j: usize, sheet: Sheet, r: f64, theta: &[f64]) -> Result<f64> {
        let neck = &self.necks[j];
        if r < neck.eps_bar {
            return Err(Error::Argument(format!("radius {r} inside the waist of neck {j}")));
        }
        let eta = cutoff_eta(r / neck.rho);
        let sign = -sheet.reflect();
        let cat = if eta < 1.0 {
            neck.b_bar + sign * neck.eps_bar * catenoid_graph(self.n(), r / neck.eps_bar)?
        } else {
            0.0
        };
        let face = if eta > 0.0 { self.face_height(neck, sheet, r, theta)? } else { 0.0 };
        Ok((1.0 - eta) * cat + eta * face)
    }

    /// Mean curvature of a transition sheet at `ŷ = r θ`.
    fn transition_h(&self, j: usize, sheet: Sheet, r: f64, theta: &[f64]) -> Result<(f64, f64)> {
        let n = self.n();
        let nf = n as f64;
        let refl = sheet.reflect();
        let h = 1e-3 * r;
        let height = self.sheet_height(j, sheet, r, theta)?;
        let l = refl * height;
        let (h0, yn) = if self.necks[j].face(sheet).axisymmetric {
            let f = |x: f64| self.sheet_height(j, sheet, x, theta).map(|v| refl * v).unwrap_or(f64::NAN);
            let (l1, l2) = (d1(f, r, h), d2(f, r, h));
            let w = (1.0 + l1 * l1).sqrt();
            (-(l2 / w.powi(3) + (nf - 1.0) * l1 / (r * w)), (l - r * l1) / w)
        } else {
            let y0: Vec<f64> = theta.iter().map(|t| r * t).collect();
            let f = |y: &[f64]| -> f64 {
                let rr = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let th: Vec<f64> = y.iter().map(|v| v / rr).collect();
                self.sheet_height(j, sheet, rr, &th).map(|v| refl * v).unwrap_or(f64::NAN)
            };
            let shifted = |d: &[(usize, f64)]| {
                let mut y = y0.clone();
                for &(k, t) in d {
                    y[k] += t;
                }
                f(&y)
            };
            let mut g = DVector::zeros(n);
            let mut kk = DMatrix::zeros(n, n);
            for a in 0..n {
                let (p, m) = (shifted(&[(a, h)]), shifted(&[(a, -h)]));
                g[a] = (p - m) / (2.0 * h);
                kk[(a, a)] = (p - 2.0 * l + m) / (h * h);
                for b in 0..a {
                    let v = (shifted(&[(a, h), (b, h)]) - shifted(&[(a, h), (b, -h)])
                        - shifted(&[(a, -h), (b, h)])
                        + shifted(&[(a, -h), (b, -h)]))
                        / (4.0 * h * h);
                    kk[(a, b)] = v;
                    kk[(b, a)] = v;
                }
            }
            let w = (1.0 + g.norm_squared()).sqrt();
            let gkg = (g.transpose() * &kk * &g)[(0, 0)];
            let gy: f64 = g.iter().zip(&y0).map(|(a, b)| a * b).sum();
            (-(kk.trace() / w - gkg / w.powi(3)), (l - gy) / w)
        };
        if !(h0.is_finite() && yn.is_finite()) {
            return Err(Error::Singular(format!("transition sheet of neck {j} not smooth at |y| = {r}")));
        }
        let a = 0.5 * (1.0 + l * l + r * r);
        Ok((height, a * h0 - nf * yn))
    }

    /// Ambient point of a labelled parametric point.
    pub fn embed(&self, label: &RegionLabel, par: &Parametric) -> Result<AmbientVector> {
        match (label.block, par) {
            (BlockId::Sphere(i), Parametric::Sphere { mu, angles }) => {
                let (p, _) = sphere_frame(*mu, &unit_from_angles(angles));
                self.spheres[i].point(&p)
            }
            (BlockId::Neck(j), Parametric::Neck { s, angles }) => Ok(self.necks[j].to_ambient(&self.neck_chart_point(j, *s, angles))),
            (BlockId::Neck(j), Parametric::Transition { r, angles }) => {
                let th = unit_from_angles(angles);
                let sheet = side_sheet(label.side)?;
                let y1 = self.sheet_height(j, sheet, *r, &th)?;
                Ok(self.necks[j].to_ambient(&ChartVector::new(y1, th.iter().map(|t| r * t).collect())))
            }
            (BlockId::Torus(t), Parametric::Torus { angles1, angles2 }) => {
                Ok(self.tori[t].point(&unit_from_angles(angles1), &unit_from_angles(angles2)))
            }
            _ => arg("parametric coordinates do not match the block"),
        }
    }

    /// Ambient point at flat coordinates `u` in the chart of `sample`.
    pub fn embed_coords(&self, sample: &SurfaceSample, u: &[f64]) -> Result<AmbientVector> {
        self.embed(&sample.region, &sample.parametric.with_coords(u))
    }

    /// Chart point of a neck or transition sample in its own neck chart.
    /// Avoids the ambient round trip, which loses precision at small scales.
    pub fn chart_point(&self, label: &RegionLabel, par: &Parametric) -> Result<ChartVector> {
        match (label.block, par) {
            (BlockId::Neck(j), Parametric::Neck { s, angles }) => Ok(self.neck_chart_point(j, *s, angles)),
            (BlockId::Neck(j), Parametric::Transition { r, angles }) => {
                let th = unit_from_angles(angles);
                let y1 = self.sheet_height(j, side_sheet(label.side)?, *r, &th)?;
                Ok(ChartVector::new(y1, th.iter().map(|t| r * t).collect()))
            }
            _ => arg("only neck and transition samples have a neck chart"),
        }
    }

    pub fn chart_coords(&self, sample: &SurfaceSample, u: &[f64]) -> Result<ChartVector> {
        self.chart_point(&sample.region, &sample.parametric.with_coords(u))
    }

    fn neck_chart_point(&self, j: usize, s: f64, angles: &[f64]) -> ChartVector {
        let neck = &self.necks[j];
        let p = catenoid_profile(self.n(), s);
        let th = unit_from_angles(angles);
        ChartVector::new(neck.b_bar + neck.eps_bar * p.psi, th.iter().map(|t| neck.eps_bar * p.phi * t).collect())
    }

    /// Analytic mean curvature at labelled parametric coordinates.
    pub fn mean_curvature(&self, label: &RegionLabel, par: &Parametric) -> Result<f64> {
        let n = self.n();
        match (label.block, par) {
            (BlockId::Sphere(i), Parametric::Sphere { mu, angles }) => {
                let sb = &self.spheres[i];
                let th = unit_from_angles(angles);
                let (p, frame) = sphere_frame(*mu, &th);
                let (f, grad, hess) = sb.perturbation.jet(&p, &frame)?;
                Ok(normal_graph_geometry(n, sb.alpha, f, &grad, &hess, *mu, &th)?.mean_curvature)
            }
            (BlockId::Neck(j), Parametric::Neck { s, angles }) => {
                let neck = &self.necks[j];
                let p = catenoid_profile(n, *s);
                let _ = angles;
                let y1 = neck.b_bar + neck.eps_bar * p.psi;
                let yn = y1 * p.dphi / p.phi - neck.eps_bar * p.phi.powf(2.0 - n as f64);
                Ok(n as f64 * yn)
            }
            (BlockId::Neck(j), Parametric::Transition { r, angles }) => {
                Ok(self.transition_h(j, side_sheet(label.side)?, *r, &unit_from_angles(angles))?.1)
            }
            (BlockId::Torus(t), Parametric::Torus { .. }) => {
                let tb = &self.tori[t];
                // `n₂ cot α − n₁ tan α` is taken with the normal pointing towards the x₁ core.
                Ok(-self.torus_orientation(t) * crate::blocks::clifford_mean_curvature(tb.n1, tb.n2, tb.alpha))
            }
            _ => arg("parametric coordinates do not match the block"),
        }
    }

    /// `±1` orienting the torus normal field consistently with the attached
    /// necks, whose sheets carry the normal across from the spheres.
    pub fn torus_orientation(&self, t: usize) -> f64 {
        let tb = &self.tori[t];
        let Some(&(j, sheet)) = tb.faces.first() else {
            return 1.0;
        };
        let neck = &self.necks[j];
        let centre = neck.placement.column(0).into_owned();
        let out = neck.placement.column(1) * f64::from(sheet.side());
        if torus_normal_field(tb, &centre).dot(&out) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Ambient vector that points into the spheres at a sample; used to
    /// orient finite-difference oracles.
    pub fn inward_hint(&self, sample: &SurfaceSample) -> Result<AmbientVector> {
        let x = &sample.ambient;
        let chart_dir = |j: usize, y: ChartVector, v: Vec<f64>| -> AmbientVector {
            let t = 1e-6;
            let shift = |sg: f64| {
                let mut w = y.to_vec();
                for (a, b) in w.iter_mut().zip(&v) {
                    *a += sg * t * b;
                }
                self.necks[j].to_ambient(&ChartVector::from_slice(&w))
            };
            (shift(1.0) - shift(-1.0)) / (2.0 * t)
        };
        match (sample.region.block, &sample.parametric) {
            (BlockId::Sphere(i), _) => {
                let centre = self.spheres[i].placement.column(0).into_owned();
                Ok(centre - x)
            }
            (BlockId::Neck(j), Parametric::Neck { s, angles }) => {
                let y = self.neck_chart_point(j, *s, angles);
                let nu = crate::blocks::catenoid_normal(self.n(), *s, &unit_from_angles(angles));
                Ok(chart_dir(j, y, nu.iter().copied().collect()))
            }
            (BlockId::Neck(j), Parametric::Transition { .. }) => {
                let y = self.necks[j].to_chart(x)?;
                let mut v = vec![0.0; self.n() + 1];
                v[0] = f64::from(side_sheet(sample.region.side)?.side());
                Ok(chart_dir(j, y, v))
            }
            (BlockId::Torus(t), _) => Ok(self.torus_orientation(t) * torus_normal_field(&self.tori[t], x)),
            _ => arg("sample parametrisation does not match its block"),
        }
    }

    /// Chart radius of `x` in the nearest attached neck chart, or infinity
    /// when `x` is farther than `2ρ₀` from every neck centre.
    pub(crate) fn tube_distance(&self, x: &AmbientVector, necks: &[usize]) -> f64 {
        let limit = 2.0 * self.params.rho0;
        necks
            .iter()
            .filter_map(|&j| self.necks[j].to_chart(x).ok())
            .filter(|y| y.norm_sq().sqrt() < limit)
            .map(|y| y.yhat_norm())
            .fold(f64::INFINITY, f64::min)
    }

    // -----------------------------------------------------------------------
    // Weights and norms

    pub fn weight_function(&self, sample: &SurfaceSample) -> f64 {
        sample.weight
    }

    /// `max ζ^{−δ}|f|` near the necks and `max |f|` outside `Tub_{ρ₀}`.
    pub fn weighted_sup_norm(&self, field: &[f64], delta: f64) -> Result<f64> {
        if field.len() != self.samples.len() {
            return arg(format!("field has {} values for {} samples", field.len(), self.samples.len()));
        }
        let rho0 = self.params.rho0;
        let mut best = 0.0f64;
        for (s, f) in self.samples.iter().zip(field) {
            let a = f.abs();
            if !a.is_finite() {
                return Err(Error::Divergence("field is not finite".into()));
            }
            if a == 0.0 {
                continue;
            }
            let v = if s.tube_distance >= rho0 { a } else { (a.ln() - delta * s.weight.ln()).exp() };
            best = best.max(v);
        }
        Ok(best)
    }
}

/// Normal field `(−tan α x₁, cot α x₂)` of the torus through `x`.
fn torus_normal_field(t: &TorusBlock, x: &AmbientVector) -> AmbientVector {
    let k = t.n1 + 1;
    let ta = t.alpha.tan();
    DVector::from_fn(x.len(), |i, _| if i < k { -ta * x[i] } else { x[i] / ta })
}

fn side_sheet(side: Option<i8>) -> Result<Sheet> {
    match side {
        Some(-1) => Ok(Sheet::Lower),
        Some(1) => Ok(Sheet::Upper),
        _ => arg("transition sample without a sheet"),
    }
}

/// `ζ` from the tube distance `d`: `d` up to `ρ₀/2`, `ρ₀` beyond `2ρ₀`, and a
/// monotone cubic Hermite interpolation of `log ζ` against `log d` between.
pub fn weight_from_distance(d: f64, rho0: f64) -> f64 {
    let lo = 0.5 * rho0;
    if d <= lo {
        return d;
    }
    if d >= 2.0 * rho0 {
        return rho0;
    }
    let l4 = 4f64.ln();
    let t = (d / lo).ln() / l4;
    let v = lo.ln() + l4 * (t * t * t - 2.0 * t * t + t) + 2f64.ln() * (-2.0 * t * t * t + 3.0 * t * t);
    v.exp()
}
