use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Train / validation / test shares of patients.
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            split_ratios: [0.8, 0.1, 0.1],
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err(Error::Config(format!("rmsprop_decay {} outside [0, 1)", self.rmsprop_decay)));
        }
        if self.rmsprop_eps <= 0.0 {
            return Err(Error::Config("rmsprop_eps must be positive".into()));
        }
        validate_ratios(&self.split_ratios)
    }
}

pub fn validate_ratios(r: &[f64; 3]) -> Result<()> {
    if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {r:?} must be positive and sum to 1"
        )));
    }
    Ok(())
}

/// SplitMix64 step, used to derive independent seeds from one run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
