//! Triangle meshes of surfaces in `S³` and profile tables.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{Assembly, BlockId, Construction, Parametric, RegionKind, SurfaceSample};
use crate::ambient::rotation_matrix;
use crate::blocks::sphere_point;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Obj,
    Ply,
    CsvProfile,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "csv" | "csv_profile" | "csv-profile" => Ok(Self::CsvProfile),
            _ => Err(Error::Config(format!("unknown export format {s:?}"))),
        }
    }
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Obj => "obj",
            Self::Ply => "ply",
            Self::CsvProfile => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Stereographic projection to `R³` from a pole away from the surface.
    Stereo,
    /// Raw coordinates in `R⁴`.
    Coords4,
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stereo" => Ok(Self::Stereo),
            "coords4" => Ok(Self::Coords4),
            _ => Err(Error::Config(format!("unknown projection {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Mesh {
    /// Points of `S³ ⊂ R⁴`.
    pub vertices: Vec<DVector<f64>>,
    pub regions: Vec<RegionKind>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut count = std::collections::HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        count.values().all(|&c| c == 2)
    }

    /// Region of a face: the most specific region among its vertices.
    fn face_region(&self, f: &[usize; 3]) -> RegionKind {
        let rank = |r: RegionKind| match r {
            RegionKind::Neck => 0,
            RegionKind::Transition => 1,
            RegionKind::Exterior => 2,
        };
        f.iter().map(|&v| self.regions[v]).min_by_key(|r| rank(*r)).unwrap_or(RegionKind::Exterior)
    }

    /// Quads of a `rows × cols` vertex grid starting at `base`; columns wrap.
    fn push_band(&mut self, base: usize, rows: usize, cols: usize, wrap_rows: bool) {
        let row_pairs = if wrap_rows { rows } else { rows.saturating_sub(1) };
        for r in 0..row_pairs {
            let r2 = (r + 1) % rows;
            for c in 0..cols {
                let c2 = (c + 1) % cols;
                let (a, b, d, e) = (base + r * cols + c, base + r * cols + c2, base + r2 * cols + c, base + r2 * cols + c2);
                self.faces.push([a, b, e]);
                self.faces.push([a, e, d]);
            }
        }
    }
}

/// Triangulation of the bare hypersphere `P S_α` for `n = 2`: two pole
/// vertices and `res/2 − 1` rings of `res` vertices.
pub fn sphere_block_mesh(placement: &DMatrix<f64>, alpha: f64, res: usize) -> Result<Mesh> {
    if placement.shape() != (4, 4) {
        return Err(Error::Unsupported("triangle meshes need n = 2".into()));
    }
    let res = res.max(4);
    let rings = res / 2 - 1;
    let mut mesh = Mesh::default();
    let push = |mu: f64, phi: f64, mesh: &mut Mesh| {
        mesh.vertices.push(placement * sphere_point(alpha, mu, &[phi.cos(), phi.sin()]));
        mesh.regions.push(RegionKind::Exterior);
    };
    push(0.0, 0.0, &mut mesh);
    for i in 1..=rings {
        let mu = std::f64::consts::PI * i as f64 / (rings + 1) as f64;
        for j in 0..res {
            push(mu, 2.0 * std::f64::consts::PI * j as f64 / res as f64, &mut mesh);
        }
    }
    push(std::f64::consts::PI, 0.0, &mut mesh);
    let south = mesh.vertices.len() - 1;
    for j in 0..res {
        let j2 = (j + 1) % res;
        mesh.faces.push([0, 1 + j2, 1 + j]);
        let last = 1 + (rings - 1) * res;
        mesh.faces.push([south, last + j, last + j2]);
    }
    mesh.push_band(1, rings, res, false);
    Ok(mesh)
}

/// Samples along one meridian, ordered around the chain: for each sphere,
/// its exterior from the trailing face to the leading one, then the next
/// neck from its lower transition through the waist to the upper one.
pub fn meridian_profile(asm: &Assembly) -> Result<Vec<&SurfaceSample>> {
    if asm.params.construction != Construction::Delaunay {
        return Err(Error::Unsupported("profiles exist for the axisymmetric delaunay construction only".into()));
    }
    if asm.samples.is_empty() {
        return Err(Error::Argument("the assembly has no samples".into()));
    }
    let mut out = Vec::new();
    for g in &asm.grids {
        let cols = g.cols();
        for r in 0..g.rows {
            if let Some(i) = g.cells[r * cols] {
                out.push(&asm.samples[i]);
            }
        }
    }
    Ok(out)
}

/// Closed mesh of an `n = 2` delaunay assembly: the meridian profile swept
/// around by the rotations of the `(x², x³)` plane, which preserve it.
fn revolved_mesh(asm: &Assembly, cols: usize) -> Result<Mesh> {
    let profile = meridian_profile(asm)?;
    let mut mesh = Mesh::default();
    for s in &profile {
        for c in 0..cols {
            let rot = rotation_matrix(2, 3, 2.0 * std::f64::consts::PI * c as f64 / cols as f64, 4);
            mesh.vertices.push(rot * &s.ambient);
            mesh.regions.push(s.region.kind);
        }
    }
    mesh.push_band(0, profile.len(), cols, true);
    Ok(mesh)
}

/// Per-grid triangulation; grids with holes lose the faces touching them.
fn grid_mesh(asm: &Assembly) -> Mesh {
    let mut mesh = Mesh::default();
    let base = mesh.vertices.len();
    mesh.vertices.extend(asm.samples.iter().map(|s| s.ambient.clone()));
    mesh.regions.extend(asm.samples.iter().map(|s| s.region.kind));
    for g in &asm.grids {
        if g.dir_shape.len() != 1 {
            continue;
        }
        let cols = g.cols();
        let wrap_rows = matches!(g.block, BlockId::Torus(_));
        let row_pairs = if wrap_rows { g.rows } else { g.rows.saturating_sub(1) };
        for r in 0..row_pairs {
            let r2 = (r + 1) % g.rows;
            for c in 0..cols {
                let c2 = (c + 1) % cols;
                let at = |rr: usize, cc: usize| g.cells[rr * cols + cc].map(|i| base + i);
                if let (Some(a), Some(b), Some(d), Some(e)) = (at(r, c), at(r, c2), at(r2, c), at(r2, c2)) {
                    mesh.faces.push([a, b, e]);
                    mesh.faces.push([a, e, d]);
                }
            }
        }
    }
    mesh
}

/// Triangle mesh of an `n = 2` assembly.
pub fn assembly_mesh(asm: &Assembly) -> Result<Mesh> {
    if asm.n() != 2 {
        return Err(Error::Unsupported(format!("triangle meshes need n = 2, got n = {}", asm.n())));
    }
    if asm.samples.is_empty() {
        return Err(Error::Argument("the assembly has no samples".into()));
    }
    if asm.params.construction == Construction::Delaunay {
        revolved_mesh(asm, asm.params.resolution.max(8))
    } else {
        Ok(grid_mesh(asm))
    }
}

/// Pole `±e_i` farthest from every vertex.
fn projection_pole(vertices: &[DVector<f64>]) -> DVector<f64> {
    let mut best = (f64::NEG_INFINITY, DVector::zeros(4));
    for i in 0..4 {
        for sign in [1.0, -1.0] {
            let mut q = DVector::zeros(4);
            q[i] = sign;
            let gap = vertices.iter().map(|v| (v - &q).norm()).fold(f64::INFINITY, f64::min);
            if gap > best.0 {
                best = (gap, q);
            }
        }
    }
    best.1
}

fn project(mesh: &Mesh, projection: Projection) -> Vec<Vec<f64>> {
    match projection {
        Projection::Coords4 => mesh.vertices.iter().map(|v| v.iter().copied().collect()).collect(),
        Projection::Stereo => {
            let q = projection_pole(&mesh.vertices);
            let axis = q.iamax();
            mesh.vertices
                .iter()
                .map(|v| {
                    let t = v.dot(&q);
                    (0..4).filter(|&k| k != axis).map(|k| v[k] / (1.0 - t)).collect()
                })
                .collect()
        }
    }
}

fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_obj(mesh: &Mesh, projection: Projection) -> String {
    let pts = project(mesh, projection);
    let mut out = String::new();
    let _ = writeln!(out, "# {} vertices, {} faces", pts.len(), mesh.faces.len());
    for p in &pts {
        let coords: Vec<String> = p.iter().map(|v| fmt9(*v)).collect();
        let _ = writeln!(out, "v {}", coords.join(" "));
    }
    for kind in [RegionKind::Neck, RegionKind::Transition, RegionKind::Exterior] {
        let faces: Vec<&[usize; 3]> = mesh.faces.iter().filter(|f| mesh.face_region(f) == kind).collect();
        if faces.is_empty() {
            continue;
        }
        let _ = writeln!(out, "g {}", kind.name());
        let _ = writeln!(out, "usemtl {}", kind.name());
        for f in faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
    }
    out
}

pub fn write_ply(mesh: &Mesh, projection: Projection) -> String {
    let pts = project(mesh, projection);
    let names = ["x", "y", "z", "w"];
    let dim = pts.first().map_or(3, Vec::len);
    let mut out = String::new();
    let _ = writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", pts.len());
    for name in &names[..dim] {
        let _ = writeln!(out, "property double {name}");
    }
    let _ = writeln!(out, "property uchar region");
    let _ = writeln!(out, "element face {}", mesh.faces.len());
    let _ = writeln!(out, "property list uchar int vertex_indices\nend_header");
    for (p, r) in pts.iter().zip(&mesh.regions) {
        let coords: Vec<String> = p.iter().map(|v| fmt9(*v)).collect();
        let _ = writeln!(out, "{} {}", coords.join(" "), *r as u8);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

/// Profile table with columns `param, radius, y1, region, block, zeta, H`:
/// `param` is `μ`, `s` or the chart radius, `radius` the distance from the
/// plane of the central geodesic and `y1` the height in the nearest neck chart.
pub fn csv_profile(asm: &Assembly) -> Result<String> {
    let profile = meridian_profile(asm)?;
    let mut out = String::from("param,radius,y1,region,block,zeta,H\n");
    for s in profile {
        let (param, neck) = match (&s.parametric, s.region.block) {
            (Parametric::Sphere { mu, .. }, BlockId::Sphere(i)) => {
                let near = asm.spheres[i]
                    .faces
                    .iter()
                    .map(|f| f.0)
                    .min_by(|a, b| {
                        let d = |j: usize| (&asm.necks[j].placement.column(0) - &s.ambient).norm();
                        d(*a).total_cmp(&d(*b))
                    })
                    .unwrap_or(0);
                (*mu, near)
            }
            (Parametric::Neck { s: t, .. }, BlockId::Neck(j)) => (*t, j),
            (Parametric::Transition { r, .. }, BlockId::Neck(j)) => (*r, j),
            _ => return Err(Error::Argument("profile sample outside the chain".into())),
        };
        let y1 = asm.necks[neck].to_chart(&s.ambient)?.y1;
        let radius = s.ambient.rows(2, s.ambient.len() - 2).norm();
        let block = match s.region.block {
            BlockId::Sphere(i) => format!("sphere{i}"),
            BlockId::Neck(j) => format!("neck{j}"),
            BlockId::Torus(t) => format!("torus{t}"),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt9(param),
            fmt9(radius),
            fmt9(y1),
            s.region.kind.name(),
            block,
            fmt9(s.weight),
            fmt9(s.analytic_h)
        );
    }
    Ok(out)
}

/// File contents for `format`.
pub fn export_mesh(asm: &Assembly, format: ExportFormat, projection: Projection) -> Result<String> {
    match format {
        ExportFormat::CsvProfile => csv_profile(asm),
        ExportFormat::Obj => Ok(write_obj(&assembly_mesh(asm)?, projection)),
        ExportFormat::Ply => Ok(write_ply(&assembly_mesh(asm)?, projection)),
    }
}
