//! Sparse direct factorizations backed by faer.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::{Mat, Par, Side};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

enum Factor {
    Empty,
    Lu(Box<Lu<usize, f64>>),
    Llt(Box<Llt<usize, f64>>),
}

/// A factorized square matrix that can be reused for many right-hand sides.
pub struct SparseSolver {
    n: usize,
    factor: Factor,
}

impl std::fmt::Debug for SparseSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.factor {
            Factor::Empty => "empty",
            Factor::Lu(_) => "lu",
            Factor::Llt(_) => "llt",
        };
        f.debug_struct("SparseSolver").field("n", &self.n).field("kind", &kind).finish()
    }
}

fn single_threaded() {
    faer::set_global_parallelism(Par::Seq);
}

impl SparseSolver {
    /// LU with partial pivoting; works for indefinite matrices.
    pub fn lu(a: &CsrMatrix) -> Result<Self> {
        single_threaded();
        if a.n() == 0 {
            return Ok(SparseSolver { n: 0, factor: Factor::Empty });
        }
        let lu = a.to_faer()?.sp_lu().map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(SparseSolver { n: a.n(), factor: Factor::Lu(Box::new(lu)) })
    }

    /// Cholesky factorization of a symmetric positive definite matrix.
    pub fn cholesky(a: &CsrMatrix) -> Result<Self> {
        single_threaded();
        if a.n() == 0 {
            return Ok(SparseSolver { n: 0, factor: Factor::Empty });
        }
        let llt = a
            .to_faer()?
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Solver(format!("sparse Cholesky failed: {e:?}")))?;
        Ok(SparseSolver { n: a.n(), factor: Factor::Llt(Box::new(llt)) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length mismatch");
        let mut x = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        match &self.factor {
            Factor::Empty => return Vec::new(),
            Factor::Lu(lu) => lu.solve_in_place(x.as_mut()),
            Factor::Llt(llt) => llt.solve_in_place(x.as_mut()),
        }
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_systems() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -3.0)]).unwrap();
        let x = SparseSolver::lu(&a).unwrap().solve(&[3.0, -2.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(SparseSolver::cholesky(&a).is_err());
        let spd = CsrMatrix::from_triplets(2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        let x = SparseSolver::cholesky(&spd).unwrap().solve(&[5.0, 4.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(SparseSolver::lu(&CsrMatrix::identity(0)).unwrap().solve(&[]).is_empty());
    }
}
