//! Dense tensor decompositions and moment-based latent variable estimation.
//!
//! - [`tensor`]: dense storage, fibers, slices, matricization, Kruskal form
//! - [`products`]: Kronecker / Khatri-Rao / Hadamard and n-mode products
//! - [`cpd`]: CP decomposition by ALS and Jennrich's algorithm
//! - [`tucker`]: HOSVD and HOOI
//! - [`power`]: symmetric tensor power iteration with deflation
//! - [`moments`]: spherical GMM and single-topic model estimation
//! - [`io`]: text tensor/sample files and JSON result documents
//!
//! Modes and multi-indices are 1-based throughout the public API.

pub mod cpd;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod moments;
pub mod power;
pub mod products;
pub mod random;
pub mod tensor;
pub mod tucker;

pub use error::{Error, ErrorKind, Result};
pub use tensor::{DenseTensor, KruskalTensor};
pub use tucker::TuckerTensor;
