//! Hierarchical code → visit → journey encoder for EHR outcome prediction,
//! built from masked self-attention and attention pooling.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use nn::{Graph, Scalar, Tensor, Var};
