//! Dense Cholesky reference solver used as a test and benchmark oracle.

use nalgebra::{DMatrix, DVector};

use super::LoadedFactor;
use crate::{Error, Result};

/// Largest system the dense oracle accepts.
pub const DENSE_LIMIT: usize = 5000;

pub fn dense_direct_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge(n));
    }
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let chol = a.clone().cholesky().ok_or(Error::NotSpd)?;
    Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
}

/// Lower Cholesky factor of `A^-1`, the perfect preconditioner factor.
pub fn dense_inverse_factor(a: &DMatrix<f64>) -> Result<LoadedFactor> {
    let n = a.nrows();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge(n));
    }
    let inv = a.clone().cholesky().ok_or(Error::NotSpd)?.inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    let l = inv.cholesky().ok_or(Error::NotSpd)?.l();
    LoadedFactor::dense(&l)
}
