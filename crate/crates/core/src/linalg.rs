//! Thin wrappers over the dense and sparse direct factorizations in `faer`.

use std::sync::Once;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::sparse::linalg::solvers::Llt;
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};
use crate::fem::CsrMatrix;

static SEQUENTIAL: Once = Once::new();

// Parallelism lives at the patch level; factorizations stay sequential so
// results do not depend on the thread schedule.
fn sequential_factorizations() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

pub type DenseMatrix = Mat<f64>;

pub fn dense_from_rows(rows: &[Vec<f64>]) -> DenseMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn column(v: &[f64]) -> DenseMatrix {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn column_to_vec(m: &DenseMatrix, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &DenseMatrix) -> f64 {
    match a.singular_values() {
        Ok(s) if !s.is_empty() => {
            let max = s.iter().copied().fold(0.0f64, f64::max);
            let min = s.iter().copied().fold(f64::INFINITY, f64::min);
            if min == 0.0 {
                f64::INFINITY
            } else {
                max / min
            }
        }
        _ => f64::INFINITY,
    }
}

/// LU factorization with partial pivoting of a small dense matrix.
pub struct DenseLu {
    lu: PartialPivLu<f64>,
    n: usize,
}

impl DenseLu {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        sequential_factorizations();
        let lu = a.partial_piv_lu();
        let n = a.nrows();
        // Zero pivots surface as non-finite solutions.
        let probe = lu.solve(Mat::<f64>::from_fn(n, 1, |i, _| 1.0 + i as f64));
        if (0..n).any(|i| !probe[(i, 0)].is_finite()) {
            return Err(Error::Factorization("singular dense matrix".into()));
        }
        Ok(Self { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let x = self.lu.solve(column(b));
        column_to_vec(&x, 0)
    }

    pub fn solve_mat(&self, b: &DenseMatrix) -> DenseMatrix {
        self.lu.solve(b)
    }
}

/// Sparse Cholesky factorization (AMD ordering, supernodal) of an SPD matrix.
pub struct SparseCholesky {
    llt: Llt<usize, f64>,
    n: usize,
}

impl SparseCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        sequential_factorizations();
        let n = a.nrows();
        let llt = a
            .to_faer()
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Factorization(format!("sparse Cholesky: {e:?}")))?;
        Ok(Self { llt, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let x = self.llt.solve(column(b));
        column_to_vec(&x, 0)
    }

    pub fn solve_mat(&self, b: &DenseMatrix) -> DenseMatrix {
        self.llt.solve(b)
    }
}
