//! Fused low-rank and kernel attention on dense `f64` matrices.
//!
//! Besides the attention mechanisms themselves the crate carries an analytic
//! FLOP model, numerical experiments on approximation error and rank,
//! reverse-mode gradients with a toy trainer, and a timing harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attention;
pub mod bench;
pub mod costmodel;
pub mod error;
pub mod fusion;
pub mod grad;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, RngStream};
