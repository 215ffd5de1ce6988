//! Sparse similarity-preserving hashing.
//!
//! An ISTA-type encoder maps feature vectors to sparse codes in `[-1, 1]^m`;
//! quantized ternary codes are indexed for Hamming-radius retrieval and
//! scored with precision/recall and ranking metrics.

pub mod baselines;
pub mod codes;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod multimodal;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
