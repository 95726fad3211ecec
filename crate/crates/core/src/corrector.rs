//! Localized corrector problems on extension patches, the aggregated
//! correctors `Q^m(φ_z)` and the corrected (multiscale) basis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient::PiecewiseConstantCoefficient;
use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, element_energies, element_stiffness, CsrMatrix};
use crate::geometry::{coarse_layers, extend_patch, MeshHierarchy, Patch};
use crate::linalg::{condition_number, DenseLu, DenseMatrix, SparseCholesky};
use crate::pou::{build_clement, ClementOperator};

/// Relative bound on `‖C q‖_∞ / ‖q‖_∞` accepted after a solve.
pub const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectorMode {
    /// Every patch is the whole domain.
    Ideal,
    /// Patches grown by `m` coarse layers around each anchor element.
    Localized { m: usize },
}

/// Fine-grid data shared by all corrector problems of one hierarchy.
pub struct CorrectorContext<'a> {
    pub hier: &'a MeshHierarchy,
    pub coeff: &'a PiecewiseConstantCoefficient,
    pub stiffness: CsrMatrix,
    pub clement: ClementOperator,
}

impl<'a> CorrectorContext<'a> {
    pub fn new(hier: &'a MeshHierarchy, coeff: &'a PiecewiseConstantCoefficient) -> Result<Self> {
        Ok(Self {
            hier,
            coeff,
            stiffness: assemble_stiffness(&hier.fine, coeff)?,
            clement: build_clement(hier)?,
        })
    }

    fn patch(&self, anchor: usize, mode: CorrectorMode) -> Patch {
        match mode {
            CorrectorMode::Ideal => extend_patch(self.hier, anchor, usize::MAX),
            CorrectorMode::Localized { m } => extend_patch(self.hier, anchor, m),
        }
    }
}

/// Sparse fine-grid vector with ascending indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            v[i] = x;
        }
        v
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// `−∫_T A ∇φ_z · ∇φ_w` for every fine vertex `w`, as a dense fine vector.
/// Zero when `z` is not a vertex of `T`.
pub fn assemble_corrector_rhs(hier: &MeshHierarchy, coeff: &PiecewiseConstantCoefficient, t: usize, z: usize) -> Vec<f64> {
    let mut rhs = vec![0.0; hier.fine.num_vertices()];
    let Some(k) = hier.coarse.triangles()[t].iter().position(|&v| v == z) else {
        return rhs;
    };
    let fine = &hier.fine;
    for &e in hier.children(t) {
        let tri = fine.triangles()[e];
        let phi = tri.map(|v| hier.coarse.barycentric(t, fine.vertices()[v])[k]);
        let ke = element_stiffness(fine, e);
        let a = coeff.values()[e];
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| ke[i][j] * phi[j]).sum();
            rhs[tri[i]] -= a * s;
        }
    }
    rhs
}

/// One right-hand side of a patch problem.
#[derive(Debug, Clone)]
pub struct CorrectorProblem {
    pub patch: Patch,
    pub anchor: usize,
    pub node: usize,
    /// Values on `patch.free_fine_vertices`, in that order.
    pub rhs: Vec<f64>,
}

impl CorrectorProblem {
    pub fn new(ctx: &CorrectorContext<'_>, patch: Patch, node: usize) -> Self {
        let anchor = patch.anchor;
        let full = assemble_corrector_rhs(ctx.hier, ctx.coeff, anchor, node);
        let rhs = patch.free_fine_vertices.iter().map(|&v| full[v]).collect();
        Self {
            patch,
            anchor,
            node,
            rhs,
        }
    }
}

enum SchurSolver {
    /// `V_f` restricted to the patch is trivial.
    Trivial,
    /// Patch stiffness is SPD (some patch-boundary vertex is clamped).
    Grounded { chol: SparseCholesky, y: DenseMatrix, s: DenseLu },
    /// Whole-domain patch: the stiffness has the constants in its kernel. The
    /// first dof is pinned and the constant shift becomes an extra unknown.
    Floating {
        chol: SparseCholesky,
        c_hat: CsrMatrix,
        y: DenseMatrix,
        s: DenseLu,
    },
}

/// `[[K_p, C_pᵀ], [C_p, 0]]` on the free dofs of one patch, eliminated to
/// its Schur complement `C_p K_p⁻¹ C_pᵀ`.
pub struct SaddleSystem {
    pub free: Vec<usize>,
    /// Coarse nodes whose Clément rows touch the free dofs.
    pub active_rows: Vec<usize>,
    pub k_p: CsrMatrix,
    pub c_p: CsrMatrix,
    /// 2-norm condition number of the (bordered) Schur complement.
    pub schur_condition: f64,
    solver: SchurSolver,
}

fn transpose_dense(c: &CsrMatrix) -> DenseMatrix {
    let mut d = DenseMatrix::zeros(c.ncols(), c.nrows());
    for i in 0..c.nrows() {
        let (idx, val) = c.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            d[(j, i)] = v;
        }
    }
    d
}

fn sparse_times_dense(c: &CsrMatrix, y: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(c.nrows(), y.ncols(), |i, j| {
        let (idx, val) = c.row(i);
        idx.iter().zip(val).map(|(&l, &v)| v * y[(l, j)]).sum()
    })
}

fn dense_times_vec(y: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..y.nrows())
        .map(|i| (0..y.ncols()).map(|j| y[(i, j)] * x[j]).sum())
        .collect()
}

impl SaddleSystem {
    pub fn new(ctx: &CorrectorContext<'_>, patch: &Patch) -> Result<Self> {
        let hier = ctx.hier;
        let nf = hier.fine.num_vertices();
        let free = patch.free_fine_vertices.clone();
        let mut local = vec![usize::MAX; nf];
        for (l, &v) in free.iter().enumerate() {
            local[v] = l;
        }
        let k_p = ctx.stiffness.restrict(&free, &local, free.len());

        let mut candidates: Vec<usize> = patch
            .coarse_elements
            .iter()
            .flat_map(|&t| hier.coarse.triangles()[t])
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let restricted = ctx.clement.matrix.restrict(&candidates, &local, free.len());
        let mut active_rows = Vec::new();
        let mut rows = Vec::new();
        for (r, &j) in candidates.iter().enumerate() {
            let (idx, val) = restricted.row(r);
            if !idx.is_empty() {
                active_rows.push(j);
                rows.push((idx.to_vec(), val.to_vec()));
            }
        }
        let c_p = CsrMatrix::from_rows(free.len(), rows);

        // More independent constraints than unknowns: only w = 0 satisfies them.
        let overdetermined = c_p.nrows() >= free.len() && {
            let dense = crate::linalg::dense_from_rows(&c_p.to_dense());
            let sv = dense.singular_values().unwrap_or_default();
            let max = sv.iter().copied().fold(0.0f64, f64::max);
            sv.len() == free.len() && sv.iter().all(|&s| s > 1e-12 * max)
        };
        if hier.levels == 0 || free.is_empty() || overdetermined {
            return Ok(Self {
                free,
                active_rows,
                k_p,
                c_p,
                schur_condition: 1.0,
                solver: SchurSolver::Trivial,
            });
        }

        let (solver, schur_condition) = if free.len() == nf {
            Self::floating(&k_p, &c_p)?
        } else {
            let chol = SparseCholesky::new(&k_p)?;
            let y = chol.solve_mat(&transpose_dense(&c_p));
            let s_mat = sparse_times_dense(&c_p, &y);
            let cond = condition_number(&s_mat);
            let s = DenseLu::new(&s_mat)?;
            (SchurSolver::Grounded { chol, y, s }, cond)
        };
        Ok(Self {
            free,
            active_rows,
            k_p,
            c_p,
            schur_condition,
            solver,
        })
    }

    fn floating(k_p: &CsrMatrix, c_p: &CsrMatrix) -> Result<(SchurSolver, f64)> {
        let n = k_p.nrows();
        let rest: Vec<usize> = (1..n).collect();
        let map: Vec<usize> = (0..n).map(|i| if i == 0 { usize::MAX } else { i - 1 }).collect();
        let k_hat = k_p.restrict(&rest, &map, n - 1);
        let all: Vec<usize> = (0..c_p.nrows()).collect();
        let c_hat = c_p.restrict(&all, &map, n - 1);
        let c_one = c_p.row_sums();
        let chol = SparseCholesky::new(&k_hat)?;
        let y = chol.solve_mat(&transpose_dense(&c_hat));
        let s_hat = sparse_times_dense(&c_hat, &y);
        let k = c_p.nrows();
        let bordered = DenseMatrix::from_fn(k + 1, k + 1, |i, j| match (i < k, j < k) {
            (true, true) => s_hat[(i, j)],
            (true, false) => -c_one[i],
            (false, true) => c_one[j],
            (false, false) => 0.0,
        });
        let cond = condition_number(&bordered);
        let s = DenseLu::new(&bordered)?;
        Ok((SchurSolver::Floating { chol, c_hat, y, s }, cond))
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Solves `K_p q + C_pᵀ μ = r`, `C_p q = 0` for `q` (local numbering).
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let n = self.free.len();
        if r.iter().all(|&x| x == 0.0) {
            return vec![0.0; n];
        }
        match &self.solver {
            SchurSolver::Trivial => vec![0.0; n],
            SchurSolver::Grounded { chol, y, s } => {
                let x0 = chol.solve_vec(r);
                let mu = s.solve_vec(&self.c_p.mul_vec(&x0));
                let ymu = dense_times_vec(y, &mu);
                x0.iter().zip(&ymu).map(|(a, b)| a - b).collect()
            }
            SchurSolver::Floating { chol, c_hat, y, s } => {
                let x0 = chol.solve_vec(&r[1..]);
                let mut g = c_hat.mul_vec(&x0);
                g.push(r.iter().sum());
                let sol = s.solve_vec(&g);
                let k = sol.len() - 1;
                let shift = sol[k];
                let ymu = dense_times_vec(y, &sol[..k]);
                let mut q = Vec::with_capacity(n);
                q.push(shift);
                q.extend(x0.iter().zip(&ymu).map(|(a, b)| a - b + shift));
                q
            }
        }
    }

    /// `‖C_p q‖_∞`.
    pub fn constraint_violation(&self, q: &[f64]) -> f64 {
        self.c_p.mul_vec(q).iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// `Q_T(φ_z)` on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCorrector {
    pub anchor: usize,
    pub node: usize,
    pub q: SparseVector,
}

fn checked_solve(system: &SaddleSystem, rhs: &[f64], anchor: usize, node: usize) -> Result<SparseVector> {
    let q = system.solve(rhs);
    let scale = q.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let violation = system.constraint_violation(&q);
    if violation > CONSTRAINT_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ConstraintViolation {
            anchor,
            node,
            violation,
        });
    }
    let (indices, values) = system
        .free
        .iter()
        .zip(q)
        .filter(|(_, v)| *v != 0.0)
        .map(|(&i, v)| (i, v))
        .unzip();
    Ok(SparseVector { indices, values })
}

pub fn solve_local_corrector(problem: &CorrectorProblem, system: &SaddleSystem) -> Result<LocalCorrector> {
    if problem.rhs.len() != system.num_free() {
        return Err(Error::DimensionMismatch {
            expected: system.num_free(),
            found: problem.rhs.len(),
        });
    }
    let q = checked_solve(system, &problem.rhs, problem.anchor, problem.node)?;
    Ok(LocalCorrector {
        anchor: problem.anchor,
        node: problem.node,
        q,
    })
}

/// `Q^Ω_T(φ_z)` as a dense fine vector, from its own whole-domain solve.
pub fn ideal_local_corrector(ctx: &CorrectorContext<'_>, anchor: usize, node: usize) -> Result<Vec<f64>> {
    let patch = ctx.patch(anchor, CorrectorMode::Ideal);
    let system = SaddleSystem::new(ctx, &patch).map_err(wrap(anchor, node))?;
    let problem = CorrectorProblem::new(ctx, patch, node);
    Ok(solve_local_corrector(&problem, &system)?.q.to_dense(ctx.hier.fine.num_vertices()))
}

/// Correctors of all `(T, z)` pairs and their sums `Q(φ_z) = Σ_T Q_T(φ_z)`.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub mode: CorrectorMode,
    pub fine_n: usize,
    pub num_fine: usize,
    /// Ordered by anchor, then by the position of the node in the anchor.
    /// Empty unless requested.
    pub local: Vec<LocalCorrector>,
    pub aggregated: Vec<SparseVector>,
}

impl CorrectorSet {
    pub fn num_coarse(&self) -> usize {
        self.aggregated.len()
    }

    pub fn local_for(&self, anchor: usize, node: usize) -> Option<&LocalCorrector> {
        self.local.iter().find(|c| c.anchor == anchor && c.node == node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorrectorOptions {
    /// Keep every `Q_T(φ_z)` in addition to the sums.
    pub keep_local: bool,
}

fn wrap(anchor: usize, node: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ Error::ConstraintViolation { .. } => e,
        e => Error::Corrector {
            anchor,
            node,
            source: Box::new(e),
        },
    }
}

fn solve_anchor(ctx: &CorrectorContext<'_>, anchor: usize, mode: CorrectorMode, shared: Option<&SaddleSystem>) -> Result<Vec<LocalCorrector>> {
    let patch = ctx.patch(anchor, mode);
    let owned;
    let system = match shared {
        Some(s) => s,
        None => {
            owned = SaddleSystem::new(ctx, &patch).map_err(wrap(anchor, ctx.hier.coarse.triangles()[anchor][0]))?;
            &owned
        }
    };
    ctx.hier.coarse.triangles()[anchor]
        .iter()
        .map(|&z| {
            let problem = CorrectorProblem::new(ctx, patch.clone(), z);
            solve_local_corrector(&problem, system).map_err(wrap(anchor, z))
        })
        .collect()
}

/// Sums sparse contributions in the given order.
fn accumulate<'v>(parts: impl Iterator<Item = &'v SparseVector>, scratch: &mut [f64], seen: &mut [bool]) -> SparseVector {
    let mut touched = Vec::new();
    for part in parts {
        for (&i, &v) in part.indices.iter().zip(&part.values) {
            if !seen[i] {
                seen[i] = true;
                touched.push(i);
            }
            scratch[i] += v;
        }
    }
    touched.sort_unstable();
    let mut out = SparseVector::default();
    for i in touched {
        if scratch[i] != 0.0 {
            out.indices.push(i);
            out.values.push(scratch[i]);
        }
        scratch[i] = 0.0;
        seen[i] = false;
    }
    out
}

pub fn compute_corrector_set(ctx: &CorrectorContext<'_>, mode: CorrectorMode, opts: CorrectorOptions) -> Result<CorrectorSet> {
    let hier = ctx.hier;
    let nf = hier.fine.num_vertices();
    let nc = hier.coarse.num_vertices();
    let nt = hier.coarse.num_triangles();

    if hier.levels == 0 {
        let local = if opts.keep_local {
            (0..nt)
                .flat_map(|t| {
                    hier.coarse.triangles()[t].map(|z| LocalCorrector {
                        anchor: t,
                        node: z,
                        q: SparseVector::default(),
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        return Ok(CorrectorSet {
            mode,
            fine_n: hier.fine.n(),
            num_fine: nf,
            local,
            aggregated: vec![SparseVector::default(); nc],
        });
    }

    let shared = match mode {
        CorrectorMode::Ideal => Some(SaddleSystem::new(ctx, &ctx.patch(0, mode))?),
        CorrectorMode::Localized { .. } => None,
    };

    // Without per-anchor output the ideal sums follow from one solve per node
    // with the summed right-hand side `−K P e_z`.
    if let (Some(system), false) = (&shared, opts.keep_local) {
        let p = &ctx.clement.prolongation;
        let pt = p.transpose();
        let aggregated = (0..nc)
            .into_par_iter()
            .map(|z| {
                let (idx, val) = pt.row(z);
                let mut phi = vec![0.0; nf];
                for (&i, &v) in idx.iter().zip(val) {
                    phi[i] = v;
                }
                let rhs: Vec<f64> = ctx.stiffness.mul_vec(&phi).iter().map(|x| -x).collect();
                checked_solve(system, &rhs, usize::MAX, z)
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(CorrectorSet {
            mode,
            fine_n: hier.fine.n(),
            num_fine: nf,
            local: Vec::new(),
            aggregated,
        });
    }

    let per_anchor: Vec<Vec<LocalCorrector>> = (0..nt)
        .into_par_iter()
        .map(|t| solve_anchor(ctx, t, mode, shared.as_ref()))
        .collect::<Result<_>>()?;
    let local: Vec<LocalCorrector> = per_anchor.into_iter().flatten().collect();

    let mut by_node: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (i, c) in local.iter().enumerate() {
        by_node[c.node].push(i);
    }
    let mut scratch = vec![0.0; nf];
    let mut seen = vec![false; nf];
    let aggregated = by_node
        .iter()
        .map(|ids| accumulate(ids.iter().map(|&i| &local[i].q), &mut scratch, &mut seen))
        .collect();

    Ok(CorrectorSet {
        mode,
        fine_n: hier.fine.n(),
        num_fine: nf,
        local: if opts.keep_local { local } else { Vec::new() },
        aggregated,
    })
}

/// Corrected basis `B = P + Q` with column `z` equal to `φ_z + Q(φ_z)`.
#[derive(Debug, Clone)]
pub struct MultiscaleBasis {
    pub fine_n: usize,
    pub matrix: CsrMatrix,
}

impl MultiscaleBasis {
    pub fn new(prolongation: &CsrMatrix, correctors: &CorrectorSet) -> Result<Self> {
        if prolongation.nrows() != correctors.num_fine || prolongation.ncols() != correctors.num_coarse() {
            return Err(Error::DimensionMismatch {
                expected: prolongation.ncols(),
                found: correctors.num_coarse(),
            });
        }
        let mut entries = Vec::with_capacity(prolongation.nnz());
        for i in 0..prolongation.nrows() {
            let (idx, val) = prolongation.row(i);
            entries.extend(idx.iter().zip(val).map(|(&z, &v)| (i, z, v)));
        }
        for (z, q) in correctors.aggregated.iter().enumerate() {
            entries.extend(q.indices.iter().zip(&q.values).map(|(&i, &v)| (i, z, v)));
        }
        Ok(Self {
            fine_n: correctors.fine_n,
            matrix: CsrMatrix::from_triplets(prolongation.nrows(), prolongation.ncols(), entries),
        })
    }

    /// `‖B 1 − 1‖_∞`.
    pub fn partition_defect(&self) -> f64 {
        self.matrix
            .row_sums()
            .iter()
            .fold(0.0f64, |m, s| m.max((s - 1.0).abs()))
    }
}

/// `e_k = ‖∇q‖²` over the fine elements outside the `k`-layer patch around
/// `anchor`, for `k = 0..=kmax`.
pub fn decay_profile(hier: &MeshHierarchy, q: &[f64], anchor: usize, kmax: usize) -> Vec<f64> {
    let energies = element_energies(&hier.fine, None, q);
    (0..=kmax)
        .map(|k| {
            let mut inside = vec![false; hier.coarse.num_triangles()];
            for t in coarse_layers(&hier.coarse, anchor, k) {
                inside[t] = true;
            }
            energies
                .iter()
                .enumerate()
                .filter(|&(f, _)| !inside[hier.fine_to_coarse()[f]])
                .map(|(_, e)| e)
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Per-layer contraction of the gradient norm, `exp(slope / 2)`.
    pub theta: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln e_k` against `k` over `ks`.
pub fn fit_decay(profile: &[f64], ks: std::ops::RangeInclusive<usize>) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = ks
        .filter(|&k| k < profile.len() && profile[k] > 0.0)
        .map(|k| (k as f64, profile[k].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(DecayFit {
        theta: (slope / 2.0).exp(),
        slope,
        r_squared,
    })
}
