use super::sparse::{dot, norm2, CsrMatrix};
use super::NodalVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Jacobi-preconditioned CG for a symmetric positive semidefinite matrix
/// whose kernel is the constant vector. Residuals are kept orthogonal to the
/// constants, so `b` must satisfy `Σ b = 0` up to round-off.
pub fn cg_deflated(k: &CsrMatrix, b: &[f64], opts: CgOptions) -> Result<CgOutcome> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = k
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    remove_mean(&mut r);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut kp = vec![0.0; n];
    let mut rel = norm2(&r) / bnorm;
    for it in 0..opts.max_iter {
        if rel <= opts.rel_tol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                rel_residual: rel,
            });
        }
        k.mul_vec_into(&p, &mut kp);
        let alpha = rz / dot(&p, &kp);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        remove_mean(&mut r);
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm2(&r) / bnorm;
    }
    if rel <= opts.rel_tol {
        return Ok(CgOutcome {
            x,
            iterations: opts.max_iter,
            rel_residual: rel,
        });
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: rel,
    })
}

/// Solution of the pure-Neumann problem normalised to zero mean.
#[derive(Debug, Clone)]
pub struct NeumannSolution {
    pub u: NodalVector,
    /// Multiplier of the mean-value constraint row.
    pub multiplier: f64,
    /// `‖b − K u − λ M1‖ / ‖b‖` of the augmented system.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Solves `[[K, M1], [(M1)ᵀ, 0]] [u; λ] = [b; 0]`.
///
/// The multiplier is determined by summing the first block row (constants
/// are in the kernel of `K`), the remaining singular system is solved by
/// deflated CG and the constant shift is fixed by `∫ u = 0`.
pub fn solve_neumann_meanzero(k: &CsrMatrix, m: &CsrMatrix, b: &NodalVector, opts: CgOptions) -> Result<NeumannSolution> {
    let n = b.len();
    if k.nrows() != n || m.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            found: n,
        });
    }
    let bv = b.values();
    let sum: f64 = bv.iter().sum();
    let l1: f64 = bv.iter().map(|x| x.abs()).sum();
    let bound = 1e-8 * l1;
    if sum.abs() > bound {
        return Err(Error::IncompatibleLoad { sum: sum.abs(), bound });
    }
    let weights = m.mul_vec(&vec![1.0; n]);
    let volume: f64 = weights.iter().sum();
    let multiplier = sum / volume;
    let rhs: Vec<f64> = bv.iter().zip(&weights).map(|(b, w)| b - multiplier * w).collect();
    let CgOutcome { mut x, iterations, .. } = cg_deflated(k, &rhs, opts)?;
    let mean = dot(&weights, &x) / volume;
    x.iter_mut().for_each(|v| *v -= mean);

    let bnorm = norm2(bv);
    let residual_norm = if bnorm == 0.0 {
        0.0
    } else {
        let kx = k.mul_vec(&x);
        let res: Vec<f64> = (0..n).map(|i| bv[i] - kx[i] - multiplier * weights[i]).collect();
        norm2(&res) / bnorm
    };
    let u = NodalVector {
        mesh_n: b.mesh_n(),
        values: x,
    };
    Ok(NeumannSolution {
        u,
        multiplier,
        residual_norm,
        iterations,
    })
}

/// Direct variant of [`solve_neumann_meanzero`]: the first dof is pinned,
/// the remaining SPD block is factorized and the result shifted to zero mean.
pub fn solve_neumann_direct(k: &CsrMatrix, m: &CsrMatrix, b: &NodalVector) -> Result<NeumannSolution> {
    let n = b.len();
    if k.nrows() != n || m.nrows() != n || n == 0 {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            found: n,
        });
    }
    let bv = b.values();
    let sum: f64 = bv.iter().sum();
    let bound = 1e-8 * bv.iter().map(|x| x.abs()).sum::<f64>();
    if sum.abs() > bound {
        return Err(Error::IncompatibleLoad { sum: sum.abs(), bound });
    }
    let weights = m.mul_vec(&vec![1.0; n]);
    let volume: f64 = weights.iter().sum();
    let multiplier = sum / volume;
    let rhs: Vec<f64> = bv.iter().zip(&weights).map(|(b, w)| b - multiplier * w).collect();
    let mut x = vec![0.0; n];
    if n > 1 {
        let rest: Vec<usize> = (1..n).collect();
        let map: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect();
        let chol = crate::linalg::SparseCholesky::new(&k.restrict(&rest, &map, n - 1))?;
        x[1..].copy_from_slice(&chol.solve_vec(&rhs[1..]));
    }
    let mean = dot(&weights, &x) / volume;
    x.iter_mut().for_each(|v| *v -= mean);
    let bnorm = norm2(bv);
    let residual_norm = if bnorm == 0.0 {
        0.0
    } else {
        let kx = k.mul_vec(&x);
        let res: Vec<f64> = (0..n).map(|i| rhs[i] - kx[i]).collect();
        norm2(&res) / bnorm
    };
    Ok(NeumannSolution {
        u: NodalVector {
            mesh_n: b.mesh_n(),
            values: x,
        },
        multiplier,
        residual_norm,
        iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::PiecewiseConstantCoefficient;
    use crate::fem::{assemble_load, assemble_mass, assemble_stiffness, l2_error_against};
    use crate::geometry::build_uniform_mesh;

    fn exact(x: [f64; 2]) -> f64 {
        x[0] * x[0] / 4.0 - x[0].powi(3) / 6.0 - 1.0 / 24.0
    }

    fn solve_linear_load(n: usize) -> (crate::geometry::StructuredTriMesh, NeumannSolution, CsrMatrix) {
        let mesh = build_uniform_mesh(n).unwrap();
        let k = assemble_stiffness(&mesh, &PiecewiseConstantCoefficient::constant(&mesh, 1.0).unwrap()).unwrap();
        let m = assemble_mass(&mesh);
        let b = assemble_load(&mesh, |x| x[0] - 0.5);
        let sol = solve_neumann_meanzero(&k, &m, &b, CgOptions::default()).unwrap();
        (mesh, sol, m)
    }

    #[test]
    fn zero_load_gives_zero() {
        let mesh = build_uniform_mesh(4).unwrap();
        let k = assemble_stiffness(&mesh, &PiecewiseConstantCoefficient::constant(&mesh, 1.0).unwrap()).unwrap();
        let m = assemble_mass(&mesh);
        let sol = solve_neumann_meanzero(&k, &m, &NodalVector::zeros(&mesh), CgOptions::default()).unwrap();
        assert!(sol.u.values().iter().all(|&v| v == 0.0));
        assert_eq!(sol.multiplier, 0.0);
    }

    #[test]
    fn converges_to_closed_form_solution() {
        let mut errors = Vec::new();
        for n in [16, 32, 64] {
            let (mesh, sol, m) = solve_linear_load(n);
            assert!(sol.residual_norm < 1e-9, "residual {}", sol.residual_norm);
            assert!(sol.multiplier.abs() < 1e-12);
            let mean = dot(&m.mul_vec(&vec![1.0; mesh.num_vertices()]), sol.u.values());
            let l2 = dot(sol.u.values(), &m.mul_vec(sol.u.values())).sqrt();
            assert!(mean.abs() <= 1e-10 * l2);
            errors.push(l2_error_against(&mesh, sol.u.values(), exact));
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "observed order {order}");
        }
    }

    #[test]
    fn direct_and_iterative_solves_agree() {
        let mesh = build_uniform_mesh(16).unwrap();
        let coeff = crate::coefficient::discretize(|x| 1.0 + 50.0 * ((9.0 * x[0]).sin() * (7.0 * x[1]).cos()).abs(), &mesh).unwrap();
        let k = assemble_stiffness(&mesh, &coeff).unwrap();
        let m = assemble_mass(&mesh);
        let b = assemble_load(&mesh, |x| x[0] * x[0] - 1.0 / 3.0 + 2.0 * x[1] - 1.0);
        let it = solve_neumann_meanzero(&k, &m, &b, CgOptions { rel_tol: 1e-13, max_iter: 10_000 }).unwrap();
        let direct = solve_neumann_direct(&k, &m, &b).unwrap();
        assert!(direct.residual_norm < 1e-12);
        assert!((it.multiplier - direct.multiplier).abs() < 1e-12);
        let diff = it.u.sub(&direct.u).unwrap();
        assert!(crate::fem::norm_inf(diff.values()) < 1e-9 * crate::fem::norm_inf(direct.u.values()));
    }

    #[test]
    fn rejects_incompatible_load() {
        let mesh = build_uniform_mesh(4).unwrap();
        let k = assemble_stiffness(&mesh, &PiecewiseConstantCoefficient::constant(&mesh, 1.0).unwrap()).unwrap();
        let m = assemble_mass(&mesh);
        let b = assemble_load(&mesh, |_| 1.0);
        let err = solve_neumann_meanzero(&k, &m, &b, CgOptions::default()).unwrap_err();
        assert!(matches!(err, Error::IncompatibleLoad { .. }));
    }

    #[test]
    fn reports_non_convergence() {
        let mesh = build_uniform_mesh(16).unwrap();
        let k = assemble_stiffness(&mesh, &PiecewiseConstantCoefficient::constant(&mesh, 1.0).unwrap()).unwrap();
        let m = assemble_mass(&mesh);
        let b = assemble_load(&mesh, |x| x[0] - 0.5);
        let opts = CgOptions {
            rel_tol: 1e-12,
            max_iter: 2,
        };
        assert!(matches!(
            solve_neumann_meanzero(&k, &m, &b, opts),
            Err(Error::NotConverged { iterations: 2, .. })
        ));
    }
}
