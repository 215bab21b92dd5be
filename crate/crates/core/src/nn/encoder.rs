use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{group_multi_head, multi_head, MultiHeadParams};
use super::graph::{Graph, Var};
use super::mask::AttentionMask;
use super::tensor::Scalar;
use super::ParamTree;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Position-wise `relu(x·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams<L> {
    pub w1: L,
    pub b1: L,
    pub w2: L,
    pub b2: L,
}

impl<L> FeedForwardParams<L> {
    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> FeedForwardParams<M> {
        FeedForwardParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }
}

impl<L> ParamTree<L> for FeedForwardParams<L> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.w2"), &self.w2);
        f(format!("{prefix}.b2"), &self.b2);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut L)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
    }
}

/// One masked encoder block: attention and feed-forward sublayers, each
/// wrapped in a residual connection followed by layer normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct MasEncParams<L> {
    pub attention: MultiHeadParams<L>,
    pub ffn: FeedForwardParams<L>,
    pub ln1_gain: L,
    pub ln1_bias: L,
    pub ln2_gain: L,
    pub ln2_bias: L,
}

impl<L> MasEncParams<L> {
    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> MasEncParams<M> {
        MasEncParams {
            attention: self.attention.map(f),
            ffn: self.ffn.map(f),
            ln1_gain: f(&self.ln1_gain),
            ln1_bias: f(&self.ln1_bias),
            ln2_gain: f(&self.ln2_gain),
            ln2_bias: f(&self.ln2_bias),
        }
    }
}

impl<L> ParamTree<L> for MasEncParams<L> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        self.attention.visit(&format!("{prefix}.attention"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
        f(format!("{prefix}.ln1_gain"), &self.ln1_gain);
        f(format!("{prefix}.ln1_bias"), &self.ln1_bias);
        f(format!("{prefix}.ln2_gain"), &self.ln2_gain);
        f(format!("{prefix}.ln2_bias"), &self.ln2_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut L)) {
        self.attention.visit_mut(&format!("{prefix}.attention"), f);
        self.ffn.visit_mut(&format!("{prefix}.ffn"), f);
        f(format!("{prefix}.ln1_gain"), &mut self.ln1_gain);
        f(format!("{prefix}.ln1_bias"), &mut self.ln1_bias);
        f(format!("{prefix}.ln2_gain"), &mut self.ln2_gain);
        f(format!("{prefix}.ln2_bias"), &mut self.ln2_bias);
    }
}

/// Inverted dropout driven by its own seeded generator.
///
/// A disabled instance (evaluation mode, or rate 0) is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn new(rate: f64, training: bool, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            rate,
            rng: (training && rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn disabled() -> Self {
        Self {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let n = g.data(x).len();
        let factor = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        g.mul_const(x, factor)
    }
}

pub fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
    if eps <= 0.0 {
        return Err(Error::Config("layer norm eps must be positive".into()));
    }
    g.layer_norm(x, gain, bias, eps)
}

pub fn feed_forward<T: Scalar>(g: &mut Graph<T>, x: Var, p: &FeedForwardParams<Var>) -> Result<Var> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add_broadcast(h, p.b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, p.w2)?;
    g.add_broadcast(o, p.b2)
}

/// `y1 = LN(x + drop(MultiHead(x, M)))`, `y = LN(y1 + drop(FFN(y1)))`.
pub fn masenc_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mask: Option<&AttentionMask>,
    p: &MasEncParams<Var>,
    dropout: &mut Dropout,
) -> Result<Var> {
    let attended = multi_head(g, x, mask, &p.attention)?;
    residual_tail(g, x, attended, p, dropout)
}

/// [`masenc_block`] applied to consecutive groups of `len` rows, each with its
/// own `len × len` block of `masks`.
pub fn group_masenc_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    len: usize,
    masks: &[f64],
    p: &MasEncParams<Var>,
    dropout: &mut Dropout,
) -> Result<Var> {
    let attended = group_multi_head(g, x, len, masks, &p.attention)?;
    residual_tail(g, x, attended, p, dropout)
}

fn residual_tail<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    attended: Var,
    p: &MasEncParams<Var>,
    dropout: &mut Dropout,
) -> Result<Var> {
    let attended = dropout.apply(g, attended)?;
    let r1 = g.add(x, attended)?;
    let y1 = layer_norm(g, r1, p.ln1_gain, p.ln1_bias, LAYER_NORM_EPS)?;
    let ff = feed_forward(g, y1, &p.ffn)?;
    let ff = dropout.apply(g, ff)?;
    let r2 = g.add(y1, ff)?;
    layer_norm(g, r2, p.ln2_gain, p.ln2_bias, LAYER_NORM_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn layer_norm_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 4.0, 4.0],
        ]));
        let gain = g.constant(&Tensor::filled(vec![1, 3], 1.0));
        let bias = g.constant(&Tensor::zeros(vec![1, 3]));
        let y = layer_norm(&mut g, x, gain, bias, 1e-12).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        let expected = [-1.0 / s, 0.0, 1.0 / s, 0.0, 0.0, 0.0];
        for (a, e) in g.data(y).iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
        assert!((expected[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_standardised_row_unchanged() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::from_rows(&[vec![1.0, -1.0]]));
        let gain = g.constant(&Tensor::filled(vec![1, 2], 1.0));
        let bias = g.constant(&Tensor::zeros(vec![1, 2]));
        let y = layer_norm(&mut g, x, gain, bias, 1e-14).unwrap();
        assert!(g.data(y).iter().zip([1.0, -1.0]).all(|(a, e)| (a - e).abs() < 1e-12));
        assert!(layer_norm(&mut g, x, gain, bias, 0.0).is_err());
    }

    #[test]
    fn dropout_is_seeded() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::filled(vec![4, 8], 1.0));
        let mut a = Dropout::new(0.5, true, 7).unwrap();
        let mut b = Dropout::new(0.5, true, 7).unwrap();
        let ya = a.apply(&mut g, x).unwrap();
        let yb = b.apply(&mut g, x).unwrap();
        assert_eq!(g.data(ya), g.data(yb));
        assert!(g.data(ya).iter().all(|&v| v == 0.0 || v == 2.0));
        let mut off = Dropout::new(0.5, false, 7).unwrap();
        assert_eq!(off.apply(&mut g, x).unwrap(), x);
        assert!(Dropout::new(1.0, true, 0).is_err());
    }
}
