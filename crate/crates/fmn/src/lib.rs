//! Two-branch person re-identification with a learned spatial feature mask,
//! plus the small training engine and retrieval toolkit around it.

pub mod cli;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod network;
pub mod rerank;
pub mod rng;
pub mod tensor;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;
