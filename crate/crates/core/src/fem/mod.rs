//! P1 finite elements on structured meshes: assembly, pure-Neumann solves,
//! norms and the coarse-to-fine prolongation.

mod solve;
mod sparse;

pub use solve::{cg_deflated, solve_neumann_direct, solve_neumann_meanzero, CgOptions, CgOutcome, NeumannSolution};
pub use sparse::{dot, norm2, norm_inf, CsrMatrix};

use rayon::prelude::*;

use crate::coefficient::PiecewiseConstantCoefficient;
use crate::error::{Error, Result};
use crate::geometry::{MeshHierarchy, Point, StructuredTriMesh};

/// Nodal values tagged with the resolution of the mesh they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalVector {
    mesh_n: usize,
    values: Vec<f64>,
}

impl NodalVector {
    pub fn new(mesh: &StructuredTriMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_vertices(),
                found: values.len(),
            });
        }
        Ok(Self {
            mesh_n: mesh.n(),
            values,
        })
    }

    /// Wraps raw values for a mesh with `mesh_n` cells per side.
    pub fn from_raw(mesh_n: usize, values: Vec<f64>) -> Self {
        Self { mesh_n, values }
    }

    pub fn zeros(mesh: &StructuredTriMesh) -> Self {
        Self {
            mesh_n: mesh.n(),
            values: vec![0.0; mesh.num_vertices()],
        }
    }

    pub fn interpolate<F: Fn(Point) -> f64>(mesh: &StructuredTriMesh, f: F) -> Self {
        Self {
            mesh_n: mesh.n(),
            values: mesh.vertices().iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn mesh_n(&self) -> usize {
        self.mesh_n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_mesh(&self, mesh: &StructuredTriMesh) -> Result<()> {
        if self.mesh_n != mesh.n() {
            return Err(Error::MeshMismatch {
                expected: mesh.n(),
                found: self.mesh_n,
            });
        }
        Ok(())
    }

    pub fn sub(&self, other: &NodalVector) -> Result<NodalVector> {
        if self.mesh_n != other.mesh_n {
            return Err(Error::MeshMismatch {
                expected: self.mesh_n,
                found: other.mesh_n,
            });
        }
        Ok(NodalVector {
            mesh_n: self.mesh_n,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }
}

/// Unit-coefficient P1 element stiffness matrix.
pub fn element_stiffness(mesh: &StructuredTriMesh, t: usize) -> [[f64; 3]; 3] {
    let g = mesh.shape_gradients(t);
    let area = mesh.area(t);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

pub fn element_mass(mesh: &StructuredTriMesh, t: usize) -> [[f64; 3]; 3] {
    let a = mesh.area(t) / 12.0;
    [[2.0 * a, a, a], [a, 2.0 * a, a], [a, a, 2.0 * a]]
}

fn assemble<F>(mesh: &StructuredTriMesh, local: F) -> CsrMatrix
where
    F: Fn(usize) -> [[f64; 3]; 3] + Sync,
{
    let entries: Vec<(usize, usize, f64)> = (0..mesh.num_triangles())
        .into_par_iter()
        .flat_map_iter(|t| {
            let k = local(t);
            let tri = mesh.triangles()[t];
            (0..9).map(move |ij| (tri[ij / 3], tri[ij % 3], k[ij / 3][ij % 3]))
        })
        .collect();
    let n = mesh.num_vertices();
    CsrMatrix::from_triplets(n, n, entries)
}

/// Stiffness matrix of `∫ A ∇u · ∇v` with `A` constant per element.
pub fn assemble_stiffness(mesh: &StructuredTriMesh, coeff: &PiecewiseConstantCoefficient) -> Result<CsrMatrix> {
    if coeff.len() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_triangles(),
            found: coeff.len(),
        });
    }
    let values = coeff.values();
    Ok(assemble(mesh, |t| {
        let a = values[t];
        element_stiffness(mesh, t).map(|row| row.map(|v| a * v))
    }))
}

pub fn assemble_unit_stiffness(mesh: &StructuredTriMesh) -> CsrMatrix {
    assemble(mesh, |t| element_stiffness(mesh, t))
}

pub fn assemble_mass(mesh: &StructuredTriMesh) -> CsrMatrix {
    assemble(mesh, |t| element_mass(mesh, t))
}

/// Load vector `∫ f φ_i` using the edge-midpoint rule (exact for quadratics).
pub fn assemble_load<F>(mesh: &StructuredTriMesh, f: F) -> NodalVector
where
    F: Fn(Point) -> f64 + Sync,
{
    let local: Vec<[f64; 3]> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let p = mesh.triangle_points(t);
            let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let f01 = f(mid(p[0], p[1]));
            let f12 = f(mid(p[1], p[2]));
            let f20 = f(mid(p[2], p[0]));
            let w = mesh.area(t) / 6.0;
            [w * (f01 + f20), w * (f01 + f12), w * (f12 + f20)]
        })
        .collect();
    let mut b = vec![0.0; mesh.num_vertices()];
    for (t, loc) in local.iter().enumerate() {
        for (k, &v) in mesh.triangles()[t].iter().enumerate() {
            b[v] += loc[k];
        }
    }
    NodalVector {
        mesh_n: mesh.n(),
        values: b,
    }
}

/// Fine-grid nodal representation of every coarse hat function, as a
/// `fine × coarse` matrix. Exact because the meshes are nested.
pub fn prolongation(hier: &MeshHierarchy) -> CsrMatrix {
    let (coarse, fine) = (&hier.coarse, &hier.fine);
    let rows = fine
        .vertices()
        .iter()
        .map(|&p| {
            let t = coarse.locate(p);
            let bc = coarse.barycentric(t, p);
            let mut pairs: Vec<(usize, f64)> = coarse.triangles()[t]
                .iter()
                .zip(bc)
                .filter(|(_, l)| l.abs() > 1e-13)
                .map(|(&z, l)| (z, l))
                .collect();
            pairs.sort_unstable_by_key(|p| p.0);
            pairs.into_iter().unzip()
        })
        .collect();
    CsrMatrix::from_rows(coarse.num_vertices(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormKind {
    L2,
    H1Semi,
    H1,
}

/// Mass and unit-coefficient stiffness matrices of a mesh, for norms.
#[derive(Debug, Clone)]
pub struct FemNorms {
    mesh_n: usize,
    pub mass: CsrMatrix,
    pub unit_stiffness: CsrMatrix,
}

impl FemNorms {
    pub fn new(mesh: &StructuredTriMesh) -> Self {
        Self {
            mesh_n: mesh.n(),
            mass: assemble_mass(mesh),
            unit_stiffness: assemble_unit_stiffness(mesh),
        }
    }

    fn quad(m: &CsrMatrix, v: &[f64]) -> f64 {
        dot(v, &m.mul_vec(v)).max(0.0)
    }

    pub fn l2(&self, v: &[f64]) -> f64 {
        Self::quad(&self.mass, v).sqrt()
    }

    pub fn h1_semi(&self, v: &[f64]) -> f64 {
        Self::quad(&self.unit_stiffness, v).sqrt()
    }

    pub fn h1(&self, v: &[f64]) -> f64 {
        (Self::quad(&self.mass, v) + Self::quad(&self.unit_stiffness, v)).sqrt()
    }

    /// `(L², H¹-seminorm, H¹)` of `v`.
    pub fn norms(&self, v: &NodalVector) -> Result<(f64, f64, f64)> {
        self.check(v)?;
        let l2 = Self::quad(&self.mass, &v.values);
        let semi = Self::quad(&self.unit_stiffness, &v.values);
        Ok((l2.sqrt(), semi.sqrt(), (l2 + semi).sqrt()))
    }

    pub fn norm(&self, v: &[f64], kind: NormKind) -> f64 {
        match kind {
            NormKind::L2 => self.l2(v),
            NormKind::H1Semi => self.h1_semi(v),
            NormKind::H1 => self.h1(v),
        }
    }

    /// `‖reference − approx‖ / ‖reference‖` in the requested norm.
    pub fn relative_error(&self, reference: &NodalVector, approx: &NodalVector, kind: NormKind) -> Result<f64> {
        self.check(reference)?;
        self.check(approx)?;
        let denom = self.norm(&reference.values, kind);
        if denom == 0.0 {
            return Err(Error::ZeroReference);
        }
        let diff = reference.sub(approx)?;
        Ok(self.norm(&diff.values, kind) / denom)
    }

    fn check(&self, v: &NodalVector) -> Result<()> {
        if v.mesh_n != self.mesh_n {
            return Err(Error::MeshMismatch {
                expected: self.mesh_n,
                found: v.mesh_n,
            });
        }
        Ok(())
    }
}

/// `sqrt(vᵀ K v)` for a stiffness matrix `K`.
pub fn energy_norm(k: &CsrMatrix, v: &[f64]) -> f64 {
    dot(v, &k.mul_vec(v)).max(0.0).sqrt()
}

// Symmetric 7-point rule, exact for polynomials of degree 5.
const QUAD7: [(f64, [f64; 3]); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const W1: f64 = 0.132_394_152_788_506;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W2: f64 = 0.125_939_180_544_827;
    [
        (0.225, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
        (W1, [A1, B1, B1]),
        (W1, [B1, A1, B1]),
        (W1, [B1, B1, A1]),
        (W2, [A2, B2, B2]),
        (W2, [B2, A2, B2]),
        (W2, [B2, B2, A2]),
    ]
};

/// `‖u_h − u‖_{L²}` for a P1 field and a closed-form function.
pub fn l2_error_against<F: Fn(Point) -> f64>(mesh: &StructuredTriMesh, uh: &[f64], exact: F) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let p = mesh.triangle_points(t);
        let tri = mesh.triangles()[t];
        let area = mesh.area(t);
        for (w, l) in QUAD7 {
            let x = [
                l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
            ];
            let uhx = l[0] * uh[tri[0]] + l[1] * uh[tri[1]] + l[2] * uh[tri[2]];
            total += w * area * (uhx - exact(x)).powi(2);
        }
    }
    total.sqrt()
}

/// Per-element squared gradient energy `A_e |∇v|² area` (unit weight when
/// `coeff` is `None`).
pub fn element_energies(mesh: &StructuredTriMesh, coeff: Option<&PiecewiseConstantCoefficient>, v: &[f64]) -> Vec<f64> {
    (0..mesh.num_triangles())
        .map(|t| {
            let g = mesh.shape_gradients(t);
            let tri = mesh.triangles()[t];
            let mut grad = [0.0; 2];
            for k in 0..3 {
                grad[0] += v[tri[k]] * g[k][0];
                grad[1] += v[tri[k]] * g[k][1];
            }
            let a = coeff.map_or(1.0, |c| c.values()[t]);
            a * (grad[0] * grad[0] + grad[1] * grad[1]) * mesh.area(t)
        })
        .collect()
}
