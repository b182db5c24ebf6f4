//! Block-sparse symmetric linear algebra for the Gauss-Newton normal
//! equations: PCG, preconditioners, condition-number estimation, a dense
//! reference solver and the binary system / factor formats.

mod block;
mod condition;
mod dense;
mod factor;
mod nrab;
mod pcg;
mod precond;

pub use block::{Block, BlockSparseMatrix, BLOCK_DIM};
pub use condition::{condition_number, lanczos_extremes, ConditionEstimate};
pub use dense::{dense_direct_solve, dense_inverse_factor, DENSE_LIMIT};
pub use factor::{FactorKind, LoadedFactor, DIAG_CLAMP};
pub use nrab::{dump_system, load_system, system_from_bytes, system_to_bytes};
pub use pcg::{pcg_solve, pcg_solve_with, PcgOptions, SolveReport, Tolerance};
pub use precond::{block_jacobi, incomplete_cholesky, BlockJacobi, IncompleteCholesky, Preconditioner, PreconditionerKind};

use nalgebra::DMatrix;

/// A symmetric linear operator `y = A x`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
