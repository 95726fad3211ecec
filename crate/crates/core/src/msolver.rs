//! Galerkin solves in the corrected coarse space and error measurement
//! against the fine reference solution.

use std::time::Instant;

use faer::linalg::solvers::Solve;
use serde::{Deserialize, Serialize};

use crate::corrector::{CorrectorSet, MultiscaleBasis};
use crate::error::{Error, Result};
use crate::fem::{dot, norm2, CsrMatrix, FemNorms, NodalVector, NormKind};
use crate::linalg::{column, column_to_vec, condition_number, DenseLu, DenseMatrix};

/// Largest reduced system solved with a dense factorization.
pub const DENSE_LIMIT: usize = 2048;

#[derive(Debug, Clone)]
pub struct MultiscaleSolve {
    /// Coefficients with respect to the corrected basis.
    pub coefficients: Vec<f64>,
    pub u: NodalVector,
    pub multiplier: f64,
    /// Relative residual of the bordered reduced system.
    pub residual: f64,
    pub num_coarse: usize,
    pub seconds: f64,
}

fn bordered_dense(a: &CsrMatrix, g: &[f64]) -> DenseMatrix {
    let n = a.nrows();
    DenseMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => a.get(i, j),
        (true, false) => g[i],
        (false, true) => g[j],
        (false, false) => 0.0,
    })
}

fn bordered_sparse_solve(a: &CsrMatrix, g: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut entries = Vec::with_capacity(a.nnz() + 2 * n);
    for (i, &gi) in g.iter().enumerate() {
        let (idx, val) = a.row(i);
        entries.extend(idx.iter().zip(val).map(|(&j, &v)| (i, j, v)));
        entries.push((i, n, gi));
        entries.push((n, i, gi));
    }
    let full = CsrMatrix::from_triplets(n + 1, n + 1, entries).to_faer();
    let lu = full
        .sp_lu()
        .map_err(|e| Error::Factorization(format!("sparse LU of reduced system: {e:?}")))?;
    let x = lu.solve(column(rhs));
    Ok(column_to_vec(&x, 0))
}

/// Solves `(Bᵀ K B) x + (Bᵀ M 1) λ = Bᵀ b`, `(Bᵀ M 1)ᵀ x = 0` and returns
/// `u = B x`.
pub fn solve_multiscale(stiffness: &CsrMatrix, mass: &CsrMatrix, basis: &MultiscaleBasis, load: &NodalVector) -> Result<MultiscaleSolve> {
    let start = Instant::now();
    let b = &basis.matrix;
    if load.mesh_n() != basis.fine_n {
        return Err(Error::MeshMismatch {
            expected: basis.fine_n,
            found: load.mesh_n(),
        });
    }
    if stiffness.nrows() != b.nrows() || mass.nrows() != b.nrows() || load.len() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: b.nrows(),
            found: load.len(),
        });
    }
    let lv = load.values();
    let sum: f64 = lv.iter().sum();
    let bound = 1e-8 * lv.iter().map(|x| x.abs()).sum::<f64>();
    if sum.abs() > bound {
        return Err(Error::IncompatibleLoad { sum: sum.abs(), bound });
    }

    let bt = b.transpose();
    let reduced = bt.matmul(&stiffness.matmul(b)?)?;
    let g = bt.mul_vec(&mass.mul_vec(&vec![1.0; b.nrows()]));
    let mut rhs = bt.mul_vec(lv);
    rhs.push(0.0);
    let nc = b.ncols();

    let sol = if nc <= DENSE_LIMIT {
        let dense = bordered_dense(&reduced, &g);
        let lu = DenseLu::new(&dense).map_err(|_| {
            Error::Factorization(format!(
                "reduced system is singular (condition estimate {:e})",
                condition_number(&dense)
            ))
        })?;
        lu.solve_vec(&rhs)
    } else {
        bordered_sparse_solve(&reduced, &g, &rhs)?
    };
    let coefficients = sol[..nc].to_vec();
    let multiplier = sol[nc];

    let ax = reduced.mul_vec(&coefficients);
    let rnorm = norm2(&rhs);
    let mut res: Vec<f64> = (0..nc).map(|i| rhs[i] - ax[i] - multiplier * g[i]).collect();
    res.push(dot(&g, &coefficients));
    let residual = if rnorm == 0.0 { norm2(&res) } else { norm2(&res) / rnorm };

    let u = NodalVector::from_raw(load.mesh_n(), b.mul_vec(&coefficients));
    Ok(MultiscaleSolve {
        coefficients,
        u,
        multiplier,
        residual,
        num_coarse: nc,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row of the error table. `m = None` marks the ideal method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    #[serde(rename = "H")]
    pub coarse_h: f64,
    pub m: Option<usize>,
    pub rel_l2: f64,
    pub rel_h1: f64,
    pub rel_h1_semi: f64,
    pub h: f64,
}

pub fn compare(solution: &NodalVector, reference: &NodalVector, norms: &FemNorms, coarse_h: f64, m: Option<usize>, h: f64) -> Result<ErrorReport> {
    Ok(ErrorReport {
        coarse_h,
        m,
        rel_l2: norms.relative_error(reference, solution, NormKind::L2)?,
        rel_h1: norms.relative_error(reference, solution, NormKind::H1)?,
        rel_h1_semi: norms.relative_error(reference, solution, NormKind::H1Semi)?,
        h,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationGap {
    /// `‖∇(Q^Ω φ_z − Q^m φ_z)‖` per coarse node.
    pub per_node: Vec<f64>,
    pub max: f64,
    /// Square root of the sum of squares over nodes.
    pub total: f64,
}

/// Gradient-norm distance between ideal and localized correctors; `unit_k`
/// is the unit-coefficient fine stiffness matrix.
pub fn localization_gap(unit_k: &CsrMatrix, ideal: &CorrectorSet, localized: &CorrectorSet) -> Result<LocalizationGap> {
    if ideal.num_fine != localized.num_fine || ideal.num_coarse() != localized.num_coarse() {
        return Err(Error::DimensionMismatch {
            expected: ideal.num_coarse(),
            found: localized.num_coarse(),
        });
    }
    let n = ideal.num_fine;
    let per_node: Vec<f64> = ideal
        .aggregated
        .iter()
        .zip(&localized.aggregated)
        .map(|(a, b)| {
            let mut d = a.to_dense(n);
            for (&i, &v) in b.indices.iter().zip(&b.values) {
                d[i] -= v;
            }
            dot(&d, &unit_k.mul_vec(&d)).max(0.0).sqrt()
        })
        .collect();
    let max = per_node.iter().copied().fold(0.0, f64::max);
    let total = per_node.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(LocalizationGap { per_node, max, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{checkerboard, discretize, PiecewiseConstantCoefficient};
    use crate::corrector::{compute_corrector_set, CorrectorContext, CorrectorMode, CorrectorOptions};
    use crate::fem::{assemble_load, assemble_mass, assemble_unit_stiffness, energy_norm, solve_neumann_direct};
    use crate::geometry::{build_hierarchy, MeshHierarchy};

    fn load(x: [f64; 2]) -> f64 {
        (3.0 * std::f64::consts::PI * x[0]).cos() + x[1] - 0.5
    }

    fn setup(hier: &MeshHierarchy, coeff: &PiecewiseConstantCoefficient, mode: CorrectorMode) -> (MultiscaleSolve, NodalVector, CsrMatrix, MultiscaleBasis) {
        let ctx = CorrectorContext::new(hier, coeff).unwrap();
        let set = compute_corrector_set(&ctx, mode, CorrectorOptions::default()).unwrap();
        let basis = MultiscaleBasis::new(&ctx.clement.prolongation, &set).unwrap();
        let mass = assemble_mass(&hier.fine);
        let b = assemble_load(&hier.fine, load);
        let ms = solve_multiscale(&ctx.stiffness, &mass, &basis, &b).unwrap();
        let uh = solve_neumann_direct(&ctx.stiffness, &mass, &b).unwrap().u;
        (ms, uh, ctx.stiffness, basis)
    }

    #[test]
    fn coarse_equals_fine_reproduces_fine_solution() {
        let hier = build_hierarchy(8, 0).unwrap();
        let coeff = discretize(|x| checkerboard(x, 4, 100.0, 1.0), &hier.fine).unwrap();
        let (ms, uh, _, _) = setup(&hier, &coeff, CorrectorMode::Localized { m: 1 });
        let norms = FemNorms::new(&hier.fine);
        assert!(norms.relative_error(&uh, &ms.u, NormKind::H1).unwrap() < 1e-10);
        assert!(ms.residual < 1e-12);
    }

    #[test]
    fn galerkin_orthogonality_and_zero_mean() {
        let hier = build_hierarchy(4, 2).unwrap();
        let coeff = discretize(|x| checkerboard(x, 4, 100.0, 1.0), &hier.fine).unwrap();
        for mode in [CorrectorMode::Localized { m: 1 }, CorrectorMode::Ideal] {
            let (ms, uh, k, basis) = setup(&hier, &coeff, mode);
            let e = uh.sub(&ms.u).unwrap();
            let ke = k.mul_vec(e.values());
            let bt = basis.matrix.transpose();
            let proj = bt.mul_vec(&ke);
            let scale = norm2(&bt.mul_vec(&k.mul_vec(uh.values())));
            assert!(norm2(&proj) <= 1e-8 * scale, "{mode:?}");
            let mass = assemble_mass(&hier.fine);
            let mean = dot(&mass.mul_vec(&vec![1.0; e.len()]), ms.u.values());
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_load_gives_zero() {
        let hier = build_hierarchy(4, 2).unwrap();
        let coeff = PiecewiseConstantCoefficient::constant(&hier.fine, 1.0).unwrap();
        let ctx = CorrectorContext::new(&hier, &coeff).unwrap();
        let set = compute_corrector_set(&ctx, CorrectorMode::Localized { m: 1 }, CorrectorOptions::default()).unwrap();
        let basis = MultiscaleBasis::new(&ctx.clement.prolongation, &set).unwrap();
        let ms = solve_multiscale(&ctx.stiffness, &assemble_mass(&hier.fine), &basis, &NodalVector::zeros(&hier.fine)).unwrap();
        assert!(ms.u.values().iter().all(|&v| v == 0.0));
        let bad = assemble_load(&hier.fine, |_| 1.0);
        assert!(matches!(
            solve_multiscale(&ctx.stiffness, &assemble_mass(&hier.fine), &basis, &bad),
            Err(Error::IncompatibleLoad { .. })
        ));
    }

    #[test]
    fn ideal_energy_error_scales_with_coarse_mesh_size() {
        // One cosine per octave so that every coarse mesh leaves a comparable
        // unresolved tail of the load.
        let fine_n = 32;
        let mut ratios = Vec::new();
        for hexp in 1..=3 {
            let n = 1 << hexp;
            let hier = build_hierarchy(n, 5 - hexp).unwrap();
            let coeff = PiecewiseConstantCoefficient::constant(&hier.fine, 1.0).unwrap();
            let ctx = CorrectorContext::new(&hier, &coeff).unwrap();
            let set = compute_corrector_set(&ctx, CorrectorMode::Ideal, CorrectorOptions::default()).unwrap();
            let basis = MultiscaleBasis::new(&ctx.clement.prolongation, &set).unwrap();
            let mass = assemble_mass(&hier.fine);
            let b = assemble_load(&hier.fine, |x| {
                (0..5).map(|j| (std::f64::consts::PI * (1 << j) as f64 * x[0]).cos()).sum()
            });
            let ms = solve_multiscale(&ctx.stiffness, &mass, &basis, &b).unwrap();
            let uh = solve_neumann_direct(&ctx.stiffness, &mass, &b).unwrap().u;
            let e = uh.sub(&ms.u).unwrap();
            assert_eq!(hier.fine.n(), fine_n);
            ratios.push(energy_norm(&ctx.stiffness, e.values()) / hier.coarse.spacing());
        }
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 2.0, "{ratios:?}");
    }

    #[test]
    fn sparse_and_dense_bordered_solves_agree() {
        let mesh = crate::geometry::build_uniform_mesh(6).unwrap();
        let coeff = discretize(|x| checkerboard(x, 3, 20.0, 1.0), &mesh).unwrap();
        let k = crate::fem::assemble_stiffness(&mesh, &coeff).unwrap();
        let g = assemble_mass(&mesh).mul_vec(&vec![1.0; mesh.num_vertices()]);
        let mut rhs = assemble_load(&mesh, load).into_values();
        rhs.push(0.0);
        let sparse = bordered_sparse_solve(&k, &g, &rhs).unwrap();
        let dense = DenseLu::new(&bordered_dense(&k, &g)).unwrap().solve_vec(&rhs);
        for (a, b) in sparse.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn compare_identical_fields_is_zero() {
        let hier = build_hierarchy(2, 2).unwrap();
        let norms = FemNorms::new(&hier.fine);
        let u = NodalVector::interpolate(&hier.fine, |x| x[0] * x[1]);
        let r = compare(&u, &u, &norms, 0.5, Some(1), 0.125).unwrap();
        assert_eq!((r.rel_l2, r.rel_h1, r.rel_h1_semi), (0.0, 0.0, 0.0));
        let other = NodalVector::zeros(&hier.coarse);
        assert!(compare(&other, &u, &norms, 0.5, Some(1), 0.125).is_err());
    }

    #[test]
    fn localization_gap_decreases_and_is_scale_invariant() {
        let hier = build_hierarchy(8, 2).unwrap();
        let unit = PiecewiseConstantCoefficient::constant(&hier.fine, 1.0).unwrap();
        let scaled = unit.scaled(10.0).unwrap();
        let unit_k = assemble_unit_stiffness(&hier.fine);
        let ctx = CorrectorContext::new(&hier, &unit).unwrap();
        let ctx10 = CorrectorContext::new(&hier, &scaled).unwrap();
        let ideal = compute_corrector_set(&ctx, CorrectorMode::Ideal, CorrectorOptions::default()).unwrap();
        let ideal10 = compute_corrector_set(&ctx10, CorrectorMode::Ideal, CorrectorOptions::default()).unwrap();
        let mut gaps = Vec::new();
        for m in 0..=2 {
            let mode = CorrectorMode::Localized { m };
            let loc = compute_corrector_set(&ctx, mode, CorrectorOptions::default()).unwrap();
            let loc10 = compute_corrector_set(&ctx10, mode, CorrectorOptions::default()).unwrap();
            let g = localization_gap(&unit_k, &ideal, &loc).unwrap();
            let g10 = localization_gap(&unit_k, &ideal10, &loc10).unwrap();
            assert!((g.total - g10.total).abs() <= 1e-9 * g.total);
            gaps.push(g.total);
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        let saturated = compute_corrector_set(&ctx, CorrectorMode::Localized { m: 20 }, CorrectorOptions::default()).unwrap();
        assert!(localization_gap(&unit_k, &ideal, &saturated).unwrap().max < 1e-10);
    }
}
