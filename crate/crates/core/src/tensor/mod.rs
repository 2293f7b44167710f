//! Dense row-major matrices, deterministic sampling, norms and small-matrix
//! spectral tools.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{SpectralNorm, JACOBI_MAX_SWEEPS, JACOBI_THRESHOLD};
pub use matrix::Matrix;
pub use rng::RngStream;
