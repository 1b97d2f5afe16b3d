//! Kernelized dynamic mode decomposition with randomly pivoted partial
//! Cholesky (RPCholesky) acceleration.
//!
//! The crate bundles the building blocks and the competing pipelines:
//!
//! * [`numerics`]: dense complex linear algebra (truncated SVD, Hermitian and
//!   general eigendecompositions, orthonormalization) on top of `faer`.
//! * [`kernels`]: kernel functions, column-on-demand Gram access and random
//!   Fourier features.
//! * [`lowrank`]: RPCholesky, greedy pivoted partial Cholesky and the oASIS
//!   Nyström scheme.
//! * [`dmd`]: SVD-based DMD, EDMD, exact KDMD and randomized KDMD with
//!   data-driven residuals, mode selection and reconstruction.
//! * [`datasets`]: Duffing trajectories, row tiling and matrix persistence.
//! * [`cli`]: the `rkdmd` command-line driver.

pub mod cli;
pub mod datasets;
pub mod dmd;
pub mod error;
pub mod kernels;
pub mod lowrank;
pub mod numerics;

pub use error::{Error, Result};
pub use faer::c64;
pub use numerics::CMat;
