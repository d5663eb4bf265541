//! Subspace-constrained multi-domain low-rank adaptation.
//!
//! A frozen weight `W` is split by truncated SVD into its column space and
//! left null space. A shared adapter learns inside the column space and one
//! adapter per domain learns inside the left null space, so that domain
//! knowledge lands in directions the pretrained weight barely uses.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod lora;
pub mod losses;
pub mod model;
pub mod optim;
pub mod persist;
pub mod subspace;
pub mod train;

pub use error::{Error, Result};
