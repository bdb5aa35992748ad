//! Sketching-based low-rank approximation for third-order tensors and matrices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod linalg;
pub mod par;
pub mod tensor;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use tensor::{FactorTriple, ImplicitKR, Matrix, Norm, SparseMatrix, Tensor3, TuckerModel};
pub mod rng;
pub mod sketch;
pub mod sampling;
pub mod fro_lra;
pub mod planted;
pub mod curt;
pub mod l1_lra;
pub mod streaming;
pub mod distsim;
pub mod io;
pub mod bench;
