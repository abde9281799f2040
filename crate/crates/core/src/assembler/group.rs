//! Finite groups of block orthogonal maps `(ω¹, ω²) ∈ O(n₁+1) × O(n₂+1)`
//! acting on `S^{n+1} ⊂ R^{n₁+1} × R^{n₂+1}`.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{arg, Error, Result};

const ORTHO_TOL: f64 = 1e-10;
const MAX_ORDER: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
}

impl GroupElement {
    pub fn new(first: DMatrix<f64>, second: DMatrix<f64>) -> Result<Self> {
        for m in [&first, &second] {
            if !m.is_square() {
                return arg("group element blocks must be square");
            }
            let d = m.nrows();
            if (m.transpose() * m - DMatrix::<f64>::identity(d, d)).amax() > ORTHO_TOL {
                return arg("group element block is not orthogonal");
            }
        }
        Ok(Self { first, second })
    }

    pub fn identity(n1: usize, n2: usize) -> Self {
        Self {
            first: DMatrix::identity(n1 + 1, n1 + 1),
            second: DMatrix::identity(n2 + 1, n2 + 1),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.first.nrows() - 1, self.second.nrows() - 1)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self { first: &self.first * &other.first, second: &self.second * &other.second }
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (&self.first - &other.first).amax() <= tol && (&self.second - &other.second).amax() <= tol
    }

    /// Block diagonal matrix acting on `R^{n+2}`.
    pub fn ambient(&self) -> DMatrix<f64> {
        let (a, b) = (self.first.nrows(), self.second.nrows());
        let mut m = DMatrix::zeros(a + b, a + b);
        m.view_mut((0, 0), (a, a)).copy_from(&self.first);
        m.view_mut((a, a), (b, b)).copy_from(&self.second);
        m
    }
}

/// `T = (T₁, T₂)` with `T_j = diag(1, −1, …, −1)`.
pub fn reflection_t(n1: usize, n2: usize) -> GroupElement {
    let t = |d: usize| {
        let mut m = -DMatrix::<f64>::identity(d + 1, d + 1);
        m[(0, 0)] = 1.0;
        m
    };
    GroupElement { first: t(n1), second: t(n2) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GroupPreset {
    Trivial,
    /// `{(±I, I)}`.
    Antipodal,
    /// `{Id, T}`.
    ReflectionT,
    /// Rotation by `2π/k` in the first two coordinates of the first factor, and `T`.
    Dihedral(usize),
}

impl FromStr for GroupPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "trivial" | "identity" => Ok(Self::Trivial),
            "antipodal" => Ok(Self::Antipodal),
            "reflection-t" | "reflection_t" => Ok(Self::ReflectionT),
            _ => match t.strip_prefix("dihedral-").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(Self::Dihedral(k)),
                _ => Err(Error::Config(format!("unknown group preset {s:?}"))),
            },
        }
    }
}

pub fn preset_generators(preset: GroupPreset, n1: usize, n2: usize) -> Vec<GroupElement> {
    match preset {
        GroupPreset::Trivial => vec![GroupElement::identity(n1, n2)],
        GroupPreset::Antipodal => {
            let mut g = GroupElement::identity(n1, n2);
            g.first = -g.first;
            vec![g]
        }
        GroupPreset::ReflectionT => vec![reflection_t(n1, n2)],
        GroupPreset::Dihedral(k) => {
            let mut r = GroupElement::identity(n1, n2);
            let (s, c) = (2.0 * PI / k as f64).sin_cos();
            r.first[(0, 0)] = c;
            r.first[(1, 1)] = c;
            r.first[(1, 0)] = s;
            r.first[(0, 1)] = -s;
            vec![r, reflection_t(n1, n2)]
        }
    }
}

/// All elements generated by `gens`, identity first.
pub fn generate_group(gens: &[GroupElement]) -> Result<Vec<GroupElement>> {
    let Some(first) = gens.first() else {
        return arg("a group needs at least one generator");
    };
    let (n1, n2) = first.dims();
    for g in gens {
        GroupElement::new(g.first.clone(), g.second.clone())?;
        if g.dims() != (n1, n2) {
            return arg("generators act on different spaces");
        }
    }
    let mut elems = vec![GroupElement::identity(n1, n2)];
    let mut frontier = 0;
    while frontier < elems.len() {
        let x = elems[frontier].clone();
        frontier += 1;
        for g in gens {
            let y = g.compose(&x);
            if !elems.iter().any(|e| e.approx_eq(&y, 1e-9)) {
                elems.push(y);
                if elems.len() > MAX_ORDER {
                    return arg(format!("generated group exceeds {MAX_ORDER} elements"));
                }
            }
        }
    }
    Ok(elems)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupCheck {
    pub passes: bool,
    pub fixed_dimension: usize,
    pub order: usize,
}

/// Dimension of the space of `G`-invariant bilinear functions `Σ a_{jj'} x₁^j x₂^{j'}`.
///
/// The action `a ↦ ω¹ᵀ a ω²` is averaged over the group; the average is the
/// orthogonal projector onto the fixed space, whose rank is counted by
/// singular values `≥ 1 − 1e−8`.
pub fn group_condition_check(group: &[GroupElement], n1: usize, n2: usize) -> Result<GroupCheck> {
    if group.is_empty() {
        return arg("empty group");
    }
    let (d1, d2) = (n1 + 1, n2 + 1);
    let dim = d1 * d2;
    let mut avg = DMatrix::<f64>::zeros(dim, dim);
    for g in group {
        let g = GroupElement::new(g.first.clone(), g.second.clone())?;
        if g.dims() != (n1, n2) {
            return arg(format!("group element does not act on R^{d1} x R^{d2}"));
        }
        // vec(Aᵀ X B) = (Bᵀ ⊗ Aᵀ) vec(X) for column-major vec.
        avg += g.second.transpose().kronecker(&g.first.transpose());
    }
    avg /= group.len() as f64;
    let sv = avg.singular_values();
    let fixed_dimension = sv.iter().filter(|s| **s >= 1.0 - 1e-8).count();
    Ok(GroupCheck { passes: fixed_dimension == 0, fixed_dimension, order: group.len() })
}

/// Distinct images `ω x` with the index of the first element producing each.
pub fn orbit(group: &[GroupElement], x: &DVector<f64>, tol: f64) -> Vec<(usize, DVector<f64>)> {
    let mut out: Vec<(usize, DVector<f64>)> = Vec::new();
    for (i, g) in group.iter().enumerate() {
        let y = g.ambient() * x;
        if !out.iter().any(|(_, z)| (z - &y).amax() <= tol) {
            out.push((i, y));
        }
    }
    out
}

/// Elements fixing `x`.
pub fn stabilizer_order(group: &[GroupElement], x: &DVector<f64>, tol: f64) -> usize {
    group.iter().filter(|g| (g.ambient() * x - x).amax() <= tol).count()
}
