//! Frame-pair non-rigid RGB-D tracking.
//!
//! A target frame is covered by a uniform deformation graph whose nodes carry a
//! rotation and a translation. The graph is fitted to a source frame by
//! minimizing a feature-alignment term, a projective-depth term and an
//! as-rigid-as-possible regularizer with a fixed number of Gauss-Newton steps.
//! Each step solves a block-sparse normal system with preconditioned conjugate
//! gradient; the preconditioner is pluggable and can be loaded from a factor
//! file. Adjoints of the linear solve (exact and unrolled) are provided for
//! verification and for training external preconditioner generators.
//!
//! Module map:
//!
//! - [`frames`]: intrinsics, pinhole projection, frame and feature-map I/O.
//! - [`graph`]: deformation graph construction, masks and state packing.
//! - [`energy`]: residuals, Jacobians, bilinear sampling and normal equations.
//! - [`solver`]: block-sparse matrices, PCG, preconditioners, condition numbers.
//! - [`adjoint`]: gradients through a converged solve and through unrolled PCG.
//! - [`synth`]: synthetic scenes with ground truth and evaluation metrics.
//! - [`tracker`]: the Gauss-Newton loop and depth refinement.
//! - [`bench`]: preconditioner benchmarking reports (CSV and SVG).
//! - [`gradcheck`]: finite-difference suites for every analytic derivative.

pub mod adjoint;
pub mod bench;
pub mod clock;
pub mod energy;
pub mod error;
pub mod frames;
pub mod gradcheck;
pub mod graph;
mod par;
pub mod solver;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
