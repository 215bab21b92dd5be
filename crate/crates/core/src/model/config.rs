use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variant: the full model or one of the three ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    /// Both pooling levels replaced by summation.
    Attention,
    /// Diagonal and directional masks removed; only padding is masked.
    DireMask,
    /// No interval encoding.
    Interval,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "bitenet" => Ok(Self::Full),
            "attention" => Ok(Self::Attention),
            "diremask" => Ok(Self::DireMask),
            "interval" => Ok(Self::Interval),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Attention => "attention",
            Self::DireMask => "diremask",
            Self::Interval => "interval",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Readmission,
    Diagnosis,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "readmission" | "readm" => Ok(Self::Readmission),
            "diagnosis" | "dx" => Ok(Self::Diagnosis),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Readmission => "readmission",
            Self::Diagnosis => "diagnosis",
        })
    }
}

/// How diagnosis logits become probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosisHead {
    /// Independent per-category sigmoids (multi-label).
    #[default]
    Sigmoid,
    /// One categorical distribution over categories.
    Softmax,
}

impl FromStr for DiagnosisHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Self::Sigmoid),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::Config(format!("unknown diagnosis head `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub dim: usize,
    /// MasEnc blocks per stack.
    pub depth: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Rows in the interval lookup table; longer intervals clamp to the last.
    pub interval_days: usize,
    pub variant: Variant,
    pub task: Task,
    /// Output width for the diagnosis task.
    pub num_categories: usize,
    /// Exchanges the forward and backward mask orientations.
    pub direction_swap: bool,
    pub diagnosis_head: DiagnosisHead,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            depth: 1,
            heads: 4,
            dropout: 0.1,
            interval_days: 11 * 365,
            variant: Variant::Full,
            task: Task::Readmission,
            num_categories: 0,
            direction_swap: false,
            diagnosis_head: DiagnosisHead::Sigmoid,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.depth < 1 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.interval_days < 1 && self.uses_intervals() {
            return Err(Error::Config("interval_days must be at least 1".into()));
        }
        if self.task == Task::Diagnosis && self.num_categories < 1 {
            return Err(Error::Config(
                "diagnosis task needs num_categories >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        match self.task {
            Task::Readmission => 1,
            Task::Diagnosis => self.num_categories,
        }
    }

    pub fn uses_intervals(&self) -> bool {
        self.variant != Variant::Interval
    }

    pub fn uses_pooling(&self) -> bool {
        self.variant != Variant::Attention
    }

    pub fn uses_masks(&self) -> bool {
        self.variant != Variant::DireMask
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.dim
    }
}
