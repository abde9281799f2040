//! Embedding geometry of `S^{n+1} ⊂ R^{n+2}`.
//!
//! Rotations act in a single coordinate plane and follow the convention
//! `R(i, j, θ) e_i = cos θ e_i + sin θ e_j`. Stereographic projection is
//! centred at `e_0` and sends `x` to `x[1..] / (1 + x^0)`; the round metric
//! pulls back to `A^{-2} δ` with `A(y) = (1 + |y|^2) / 2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{arg, Error, Result};

/// Point or vector in `R^{n+2}`.
pub type AmbientVector = DVector<f64>;

/// Central finite difference step used by the metric oracles.
pub const FD_STEP: f64 = 1e-4;

/// Stereographic coordinates `(y^1, ŷ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartVector {
    pub y1: f64,
    pub yhat: Vec<f64>,
}

impl ChartVector {
    pub fn new(y1: f64, yhat: Vec<f64>) -> Self {
        Self { y1, yhat }
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self { y1: y[0], yhat: y[1..].to_vec() }
    }

    pub fn origin(n: usize) -> Self {
        Self { y1: 0.0, yhat: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.yhat.len() + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.y1);
        v.extend_from_slice(&self.yhat);
        v
    }

    pub fn norm_sq(&self) -> f64 {
        self.y1 * self.y1 + self.yhat_norm_sq()
    }

    pub fn yhat_norm_sq(&self) -> f64 {
        self.yhat.iter().map(|v| v * v).sum()
    }

    pub fn yhat_norm(&self) -> f64 {
        self.yhat_norm_sq().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct PlanarRotation {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub matrix: DMatrix<f64>,
}

/// Rotation by `theta` in the `(x^i, x^j)` plane of `R^{n+2}`.
pub fn planar_rotation(i: usize, j: usize, theta: f64, n: usize) -> Result<PlanarRotation> {
    let dim = n + 2;
    if i >= j || j >= dim {
        return arg(format!("rotation axes ({i}, {j}) invalid for ambient dimension {dim}"));
    }
    Ok(PlanarRotation { i, j, theta, matrix: rotation_matrix(i, j, theta, dim) })
}

impl PlanarRotation {
    pub fn inverse(&self) -> Self {
        Self {
            i: self.i,
            j: self.j,
            theta: -self.theta,
            matrix: self.matrix.transpose(),
        }
    }

    pub fn apply(&self, x: &AmbientVector) -> AmbientVector {
        &self.matrix * x
    }
}

/// Matrix of a planar rotation of `R^dim`; the caller guarantees `i != j < dim`.
pub fn rotation_matrix(i: usize, j: usize, theta: f64, dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(dim, dim);
    let (s, c) = theta.sin_cos();
    m[(i, i)] = c;
    m[(j, j)] = c;
    m[(j, i)] = s;
    m[(i, j)] = -s;
    m
}

/// Frame `Q_α` of the Clifford torus `T^{n1,n2}_α`.
///
/// Column 0 is the base point `p = (cos α, 0, sin α, 0)`, column 1 is the
/// torus normal `N_p = (-sin α, 0, cos α, 0)`, and the remaining columns map
/// `R^{n1} × R^{n2}` onto the tangent space at `p`.
pub fn clifford_frame(n1: usize, n2: usize, alpha: f64) -> DMatrix<f64> {
    let dim = n1 + n2 + 2;
    let mut q = DMatrix::zeros(dim, dim);
    let (s, c) = alpha.sin_cos();
    let k = n1 + 1;
    q[(0, 0)] = c;
    q[(k, 0)] = s;
    q[(0, 1)] = -s;
    q[(k, 1)] = c;
    for a in 0..n1 {
        q[(1 + a, 2 + a)] = 1.0;
    }
    for b in 0..n2 {
        q[(k + 1 + b, 2 + n1 + b)] = 1.0;
    }
    q
}

pub fn stereo_project(x: &AmbientVector) -> Result<ChartVector> {
    let denom = 1.0 + x[0];
    if denom.abs() < 1e-14 {
        return Err(Error::Pole);
    }
    Ok(ChartVector {
        y1: x[1] / denom,
        yhat: x.iter().skip(2).map(|v| v / denom).collect(),
    })
}

pub fn stereo_unproject(y: &ChartVector) -> AmbientVector {
    let r2 = y.norm_sq();
    let d = 1.0 + r2;
    let mut x = DVector::zeros(y.dim() + 1);
    x[0] = (1.0 - r2) / d;
    x[1] = 2.0 * y.y1 / d;
    for (k, v) in y.yhat.iter().enumerate() {
        x[k + 2] = 2.0 * v / d;
    }
    x
}

pub fn conformal_factor(y: &ChartVector) -> f64 {
    0.5 * (1.0 + y.norm_sq())
}

/// Pullback of the round metric through `stereo_unproject` by central differences.
pub fn fd_pullback_metric(y: &ChartVector, h: f64) -> DMatrix<f64> {
    let m = y.dim();
    let base = y.to_vec();
    let partial = |k: usize| {
        let mut p = base.clone();
        let mut q = base.clone();
        p[k] += h;
        q[k] -= h;
        (stereo_unproject(&ChartVector::from_slice(&p))
            - stereo_unproject(&ChartVector::from_slice(&q)))
            / (2.0 * h)
    };
    let cols: Vec<_> = (0..m).map(partial).collect();
    DMatrix::from_fn(m, m, |a, b| cols[a].dot(&cols[b]))
}

#[derive(Debug, Clone)]
pub struct ConformalGeometryAt {
    pub metric: DMatrix<f64>,
    /// Unit normal for the chart metric, in chart components.
    pub normal: Vec<f64>,
    pub second_form: DMatrix<f64>,
    pub mean_curvature: f64,
}

/// Geometry of a hypersurface of the chart with respect to the round metric.
///
/// Inputs are Euclidean quantities at `position` in a local frame: `H0` and
/// `B0` are taken with respect to the unit normal `normal`, with the sign for
/// which a sphere with outward normal has positive mean curvature.
pub fn conformal_geometry(
    euclidean_h0: f64,
    euclidean_normal: &[f64],
    euclidean_second_form: &DMatrix<f64>,
    euclidean_metric: &DMatrix<f64>,
    position: &ChartVector,
) -> Result<ConformalGeometryAt> {
    let nn: f64 = euclidean_normal.iter().map(|v| v * v).sum();
    if (nn - 1.0).abs() > 1e-10 {
        return arg(format!("normal is not unit: |N|^2 = {nn}"));
    }
    if euclidean_normal.len() != position.dim() {
        return arg("normal and position dimensions differ");
    }
    let n = euclidean_metric.nrows();
    if euclidean_second_form.shape() != (n, n) {
        return arg("second form and metric shapes differ");
    }
    let a = conformal_factor(position);
    let sn: f64 = position.to_vec().iter().zip(euclidean_normal).map(|(p, q)| p * q).sum();
    let metric = euclidean_metric / (a * a);
    let second_form = euclidean_second_form / a - euclidean_metric * (sn / (a * a));
    Ok(ConformalGeometryAt {
        metric,
        normal: euclidean_normal.iter().map(|v| a * v).collect(),
        second_form,
        mean_curvature: a * euclidean_h0 - n as f64 * sn,
    })
}

/// Trace of a bilinear form against a metric.
pub fn trace_against(form: &DMatrix<f64>, metric: &DMatrix<f64>) -> Result<f64> {
    let inv = metric
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("metric is not invertible".into()))?;
    Ok((inv * form).trace())
}
