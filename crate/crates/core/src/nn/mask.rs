use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive value for a disallowed attention entry.
///
/// Finite so that softmax and its gradient never see `-inf - -inf`.
pub const NEG: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    None,
    Diagonal,
    Forward,
    Backward,
    Padding,
    Combined,
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "diagonal" => Self::Diagonal,
            "forward" => Self::Forward,
            "backward" => Self::Backward,
            "padding" => Self::Padding,
            "combined" => Self::Combined,
            other => return Err(Error::Config(format!("unknown mask kind `{other}`"))),
        })
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::None => "none",
            Self::Diagonal => "diagonal",
            Self::Forward => "forward",
            Self::Backward => "backward",
            Self::Padding => "padding",
            Self::Combined => "combined",
        };
        f.write_str(s)
    }
}

/// Square additive mask. Row `i` is the query position, column `j` the key.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    kind: MaskKind,
    n: usize,
    matrix: Vec<f64>,
}

impl AttentionMask {
    /// Temporal/structural mask of size `n`.
    ///
    /// * diagonal: `M[i][j] = 0` iff `i != j`
    /// * forward:  `M[i][j] = 0` iff `i < j`
    /// * backward: `M[i][j] = 0` iff `i > j`
    ///
    /// `padding` and `combined` are not constructible from a size alone; use
    /// [`AttentionMask::padding`] and [`AttentionMask::combine`].
    pub fn build(kind: MaskKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Shape("mask length must be at least 1".into()));
        }
        let allowed: fn(usize, usize) -> bool = match kind {
            MaskKind::None => |_, _| true,
            MaskKind::Diagonal => |i, j| i != j,
            MaskKind::Forward => |i, j| i < j,
            MaskKind::Backward => |i, j| i > j,
            MaskKind::Padding | MaskKind::Combined => {
                return Err(Error::Config(format!(
                    "mask kind `{kind}` cannot be built from a length"
                )))
            }
        };
        let mut matrix = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                matrix.push(if allowed(i, j) { 0.0 } else { NEG });
            }
        }
        Ok(Self { kind, n, matrix })
    }

    /// Masks every key column whose position is invalid.
    pub fn padding(valid: &[bool]) -> Result<Self> {
        let n = valid.len();
        if n == 0 {
            return Err(Error::Shape("mask length must be at least 1".into()));
        }
        let mut matrix = Vec::with_capacity(n * n);
        for _ in 0..n {
            matrix.extend(valid.iter().map(|&v| if v { 0.0 } else { NEG }));
        }
        Ok(Self {
            kind: MaskKind::Padding,
            n,
            matrix,
        })
    }

    /// Elementwise minimum of two masks of equal size.
    pub fn combine(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Shape(format!(
                "combining masks of size {} and {}",
                self.n, other.n
            )));
        }
        Ok(Self {
            kind: MaskKind::Combined,
            n: self.n,
            matrix: self
                .matrix
                .iter()
                .zip(&other.matrix)
                .map(|(a, b)| a.min(*b))
                .collect(),
        })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.get(i, j) <= NEG / 2.0
    }
}
