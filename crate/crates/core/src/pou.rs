//! The two partitions of unity (coarse hats and coarse element indicators)
//! and the weighted Clément quasi-interpolation onto the coarse space.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, prolongation, CsrMatrix, FemNorms, NodalVector};
use crate::geometry::{build_hierarchy_capped, MeshHierarchy, Point};
use crate::linalg::{condition_number, DenseLu, DenseMatrix};

/// Coarse P1 hats represented on the fine grid.
#[derive(Debug, Clone)]
pub struct CoarsePartition {
    /// `fine × coarse`; column `z` holds the nodal values of `φ_z`.
    pub prolongation: CsrMatrix,
    /// Coarse elements forming `supp φ_z`, per coarse node.
    pub supports: Vec<Vec<usize>>,
    pub node_diameters: Vec<f64>,
    pub h: f64,
}

impl CoarsePartition {
    pub fn new(hier: &MeshHierarchy) -> Self {
        let coarse = &hier.coarse;
        let supports: Vec<Vec<usize>> = (0..coarse.num_vertices())
            .map(|z| coarse.vertex_triangles(z).to_vec())
            .collect();
        let node_diameters: Vec<f64> = supports
            .iter()
            .map(|star| {
                let pts: Vec<Point> = star.iter().flat_map(|&t| coarse.triangle_points(t)).collect();
                let mut d = 0.0f64;
                for a in &pts {
                    for b in &pts {
                        d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
                    }
                }
                d
            })
            .collect();
        let h = node_diameters.iter().copied().fold(0.0, f64::max);
        Self {
            prolongation: prolongation(hier),
            supports,
            node_diameters,
            h,
        }
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    /// Largest deviation of `Σ_z φ_z` from one over the fine vertices.
    pub fn partition_defect(&self) -> f64 {
        self.prolongation
            .row_sums()
            .iter()
            .fold(0.0f64, |m, s| m.max((s - 1.0).abs()))
    }
}

/// Indicator functions of the coarse elements.
#[derive(Debug, Clone)]
pub struct ElementPartition {
    pub num_elements: usize,
    pub h_hat: f64,
    owner: Vec<usize>,
}

impl ElementPartition {
    pub fn new(hier: &MeshHierarchy) -> Self {
        Self {
            num_elements: hier.coarse.num_triangles(),
            h_hat: hier.coarse.diameter(),
            owner: hier.fine_to_coarse().to_vec(),
        }
    }

    /// Coarse element whose indicator is one on fine element `f`.
    pub fn owner(&self, f: usize) -> usize {
        self.owner[f]
    }

    /// `Σ_T χ_T` evaluated on every fine element (all ones when the
    /// indicators tile the domain).
    pub fn indicator_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.owner.len()];
        for t in 0..self.num_elements {
            for (f, &o) in self.owner.iter().enumerate() {
                if o == t {
                    sums[f] += 1;
                }
            }
        }
        sums
    }
}

/// Weighted Clément operator `v ↦ Σ_j (v, φ_j)/(1, φ_j) φ_j`.
pub struct ClementOperator {
    coarse_n: usize,
    fine_n: usize,
    /// `coarse × fine`; row `j` is `(M φ_j)ᵀ / (1ᵀ M φ_j)`.
    pub matrix: CsrMatrix,
    pub weights: Vec<f64>,
    pub prolongation: CsrMatrix,
    /// `I` restricted to the coarse space, `C P`.
    pub restriction: DenseMatrix,
    restriction_lu: DenseLu,
}

impl std::fmt::Debug for ClementOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClementOperator")
            .field("coarse_n", &self.coarse_n)
            .field("fine_n", &self.fine_n)
            .field("nnz", &self.matrix.nnz())
            .finish()
    }
}

impl ClementOperator {
    pub fn num_coarse(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_fine(&self) -> usize {
        self.matrix.ncols()
    }

    fn check_fine(&self, v: &NodalVector) -> Result<()> {
        if v.mesh_n() != self.fine_n {
            return Err(Error::MeshMismatch {
                expected: self.fine_n,
                found: v.mesh_n(),
            });
        }
        Ok(())
    }

    /// Coarse nodal coefficients of `I(v)`.
    pub fn apply(&self, v: &NodalVector) -> Result<Vec<f64>> {
        self.check_fine(v)?;
        Ok(self.matrix.mul_vec(v.values()))
    }

    /// `I(v)` as a fine-grid nodal vector.
    pub fn apply_as_fine(&self, v: &NodalVector) -> Result<Vec<f64>> {
        Ok(self.prolongation.mul_vec(&self.apply(v)?))
    }

    /// Solves `R w = c`, i.e. applies `(I|_{V_c})⁻¹` in coefficient form.
    pub fn restriction_inverse(&self, c: &[f64]) -> Vec<f64> {
        self.restriction_lu.solve_vec(c)
    }

    pub fn restriction_condition(&self) -> f64 {
        condition_number(&self.restriction)
    }
}

pub fn build_clement(hier: &MeshHierarchy) -> Result<ClementOperator> {
    let p = prolongation(hier);
    let mass = assemble_mass(&hier.fine);
    let mp = mass.matmul(&p)?;
    let mut weights = vec![0.0; p.ncols()];
    let mpt = mp.transpose();
    let rows = (0..mpt.nrows())
        .map(|j| {
            let (idx, val) = mpt.row(j);
            weights[j] = val.iter().sum();
            let w = weights[j];
            (idx.to_vec(), val.iter().map(|v| v / w).collect())
        })
        .collect();
    let matrix = CsrMatrix::from_rows(p.nrows(), rows);
    let r = matrix.matmul(&p)?;
    let nc = r.nrows();
    let restriction = DenseMatrix::from_fn(nc, nc, |i, j| r.get(i, j));
    let restriction_lu = DenseLu::new(&restriction)?;
    Ok(ClementOperator {
        coarse_n: hier.coarse.n(),
        fine_n: hier.fine.n(),
        matrix,
        weights,
        prolongation: p,
        restriction,
        restriction_lu,
    })
}

/// Fine-grid functions `b_z` with `I(b_z) = φ_z` and `supp b_z ⊆ supp φ_z`.
#[derive(Debug, Clone)]
pub struct LiftingBasis {
    fine_n: usize,
    num_fine: usize,
    /// Sparse fine vectors `(indices, values)`, one per coarse node.
    pub functions: Vec<(Vec<usize>, Vec<f64>)>,
}

impl LiftingBasis {
    pub fn dense(&self, z: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_fine];
        let (idx, val) = &self.functions[z];
        for (&i, &x) in idx.iter().zip(val) {
            v[i] = x;
        }
        v
    }
}

/// `b_z = (2^{d+1} − 1) φ_z^r − ½ Σ_{y ∈ nb(z)} φ_y^r` with `d = 2`, built on
/// the red refinement of the coarse mesh and prolongated to the fine grid.
pub fn build_lifting(hier: &MeshHierarchy) -> Result<LiftingBasis> {
    if hier.levels == 0 {
        return Err(Error::LiftingUnavailable);
    }
    const CENTER_WEIGHT: f64 = 7.0;
    let red_hier = build_hierarchy_capped(2 * hier.coarse.n(), hier.levels - 1, usize::MAX)?;
    let red = &red_hier.coarse;
    let p_red = prolongation(&red_hier).transpose();
    let functions = (0..hier.coarse.num_vertices())
        .map(|z| {
            let (col, row) = hier.coarse.vertex_grid(z);
            let center = red.vertex_index(2 * col, 2 * row);
            let mut neighbours: Vec<usize> = red
                .vertex_triangles(center)
                .iter()
                .flat_map(|&t| red.triangles()[t])
                .filter(|&y| y != center)
                .collect();
            neighbours.sort_unstable();
            neighbours.dedup();
            let mut coeffs = vec![(center, CENTER_WEIGHT)];
            coeffs.extend(neighbours.into_iter().map(|y| (y, -0.5)));
            let mut dense = vec![0.0; hier.fine.num_vertices()];
            for (y, c) in coeffs {
                let (idx, val) = p_red.row(y);
                for (&i, &v) in idx.iter().zip(val) {
                    dense[i] += c * v;
                }
            }
            dense
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i, v))
                .unzip()
        })
        .collect();
    Ok(LiftingBasis {
        fine_n: hier.fine.n(),
        num_fine: hier.fine.num_vertices(),
        functions,
    })
}

/// Fine function `v` with `I(v) = v_c`, where `v_c` is given by its coarse
/// nodal values: `v = v_c + Σ_z (v_c − I v_c)(z) b_z`.
pub fn lift_to_preimage(op: &ClementOperator, lb: &LiftingBasis, vc: &[f64]) -> Result<NodalVector> {
    if vc.len() != op.num_coarse() {
        return Err(Error::DimensionMismatch {
            expected: op.num_coarse(),
            found: vc.len(),
        });
    }
    if lb.fine_n != op.fine_n {
        return Err(Error::MeshMismatch {
            expected: op.fine_n,
            found: lb.fine_n,
        });
    }
    let mut v = op.prolongation.mul_vec(vc);
    let ivc = op.matrix.mul_vec(&v);
    for (z, (idx, val)) in lb.functions.iter().enumerate() {
        let c = vc[z] - ivc[z];
        if c == 0.0 {
            continue;
        }
        for (&i, &b) in idx.iter().zip(val) {
            v[i] += c * b;
        }
    }
    Ok(NodalVector::from_raw(op.fine_n, v))
}

/// Measured constants of the local approximation and stability estimates
/// for one test function.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InterpolationConstants {
    pub h: f64,
    /// `‖v − I v‖_{L²} / (H ‖∇v‖)`.
    pub approximation: f64,
    /// `‖∇ I v‖ / ‖∇ v‖`.
    pub stability: f64,
}

pub fn interpolation_constants(hier: &MeshHierarchy, op: &ClementOperator, v: &NodalVector) -> Result<InterpolationConstants> {
    let norms = FemNorms::new(&hier.fine);
    let iv = op.apply_as_fine(v)?;
    let diff: Vec<f64> = v.values().iter().zip(&iv).map(|(a, b)| a - b).collect();
    let grad = norms.h1_semi(v.values());
    let h = hier.coarse.spacing();
    Ok(InterpolationConstants {
        h,
        approximation: norms.l2(&diff) / (h * grad),
        stability: norms.h1_semi(&iv) / grad,
    })
}
