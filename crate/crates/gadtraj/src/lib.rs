//! Attention-based group anomaly detection on trajectories.
//!
//! A trajectory is treated as a group of member points; a transformer
//! encoder (or a GRU baseline) maps each group to an abnormality
//! probability, trained against the fixed target p = 0. Per-block attention
//! matrices feed a block attention-anomaly score for interpretability.

pub mod bas;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gru;
pub mod model;
pub mod seeds;
pub mod syngen;
pub mod tensor;
pub mod train;

pub use tensor::{Tape, Tensor, Var};
