//! Multi-kernel capsule network for binary classification of
//! functional-connectivity matrices.

pub mod capsnet;
pub mod cli;
pub mod connectivity;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod training;

pub use error::{CheckpointError, Error, Result};
