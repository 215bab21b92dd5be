//! The full network, its configuration and parameter files.

pub mod config;
pub mod forward;
pub mod io;
pub mod params;

pub use config::{DiagnosisHead, ModelConfig, Task, Variant};
pub use forward::{forward, predict, predict_proba, BatchPrediction, ForwardOutput, ForwardTrace};
pub use io::{decode_params, encode_params, load_params, save_params, ParamFile};
pub use params::{init_params, parameter_count, pooling_layer_count, BiteNetParams, Params};
