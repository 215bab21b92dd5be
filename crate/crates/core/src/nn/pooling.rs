use super::graph::{Graph, Var};
use super::mask::NEG;
use super::tensor::Scalar;
use super::ParamTree;
use crate::error::{Error, Result};

/// Query-free additive attention scoring `f(v) = wᵀ tanh(W1 v + b1) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingParams<L> {
    /// `d × d`
    pub w1: L,
    /// `1 × d`
    pub b1: L,
    /// `1 × d`
    pub w: L,
    /// `1 × 1`
    pub b: L,
}

impl<L> PoolingParams<L> {
    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> PoolingParams<M> {
        PoolingParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w: f(&self.w),
            b: f(&self.b),
        }
    }
}

impl<L> ParamTree<L> for PoolingParams<L> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut L)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w"), &mut self.w);
        f(format!("{prefix}.b"), &mut self.b);
    }
}

fn validity_mask(valid: &[bool], len: usize, rows: usize) -> Result<Vec<f64>> {
    if valid.len() != rows || len == 0 || rows % len != 0 {
        return Err(Error::Shape(format!(
            "{} validity flags for {rows} rows in groups of {len}",
            valid.len()
        )));
    }
    if valid.chunks(len).any(|c| !c.iter().any(|&v| v)) {
        return Err(Error::Data("pooling over zero valid positions".into()));
    }
    Ok(valid.iter().map(|&v| if v { 0.0 } else { NEG }).collect())
}

/// Compresses the valid rows of `seq` (`m × d`) into one `1 × d` vector.
///
/// Returns the pooled vector and the `1 × m` weights, which are zero at
/// invalid positions and sum to one over valid ones.
pub fn attention_pooling<T: Scalar>(
    g: &mut Graph<T>,
    seq: Var,
    valid: &[bool],
    p: &PoolingParams<Var>,
) -> Result<(Var, Var)> {
    let (m, _) = g.shape(seq);
    group_attention_pooling(g, seq, m.max(1), valid, p)
}

/// [`attention_pooling`] over consecutive groups of `len` rows: `G × d`
/// pooled vectors and `G × len` weights.
pub fn group_attention_pooling<T: Scalar>(
    g: &mut Graph<T>,
    seq: Var,
    len: usize,
    valid: &[bool],
    p: &PoolingParams<Var>,
) -> Result<(Var, Var)> {
    let (rows, _) = g.shape(seq);
    let mask = validity_mask(valid, len, rows)?;
    let hidden = g.matmul_bt(seq, p.w1)?;
    let hidden = g.add_broadcast(hidden, p.b1)?;
    let hidden = g.tanh(hidden);
    let scores = g.matmul_bt(hidden, p.w)?;
    let scores = g.reshape(scores, rows / len, len)?;
    let scores = g.add_broadcast(scores, p.b)?;
    let weights = g.masked_softmax(scores, Some(&mask))?;
    let pooled = g.group_weighted_sum(weights, seq)?;
    Ok((pooled, weights))
}

/// Plain summation over valid rows; reported weights are uniform.
pub fn sum_pooling<T: Scalar>(g: &mut Graph<T>, seq: Var, valid: &[bool]) -> Result<(Var, Var)> {
    let (m, _) = g.shape(seq);
    group_sum_pooling(g, seq, m.max(1), valid)
}

pub fn group_sum_pooling<T: Scalar>(
    g: &mut Graph<T>,
    seq: Var,
    len: usize,
    valid: &[bool],
) -> Result<(Var, Var)> {
    let (rows, _) = g.shape(seq);
    validity_mask(valid, len, rows)?;
    let groups = rows / len;
    let ones: Vec<T> = valid
        .iter()
        .map(|&v| if v { T::one() } else { T::zero() })
        .collect();
    let mut uniform = Vec::with_capacity(rows);
    for chunk in ones.chunks(len) {
        let count = chunk.iter().copied().sum::<T>();
        uniform.extend(chunk.iter().map(|&o| o / count));
    }
    let selector = g.matrix(groups, len, ones);
    let pooled = g.group_weighted_sum(selector, seq)?;
    let weights = g.matrix(groups, len, uniform);
    Ok((pooled, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn params(g: &mut Graph<f64>, d: usize, w1: Tensor<f64>) -> PoolingParams<Var> {
        PoolingParams {
            w1: g.constant(&w1),
            b1: g.constant(&Tensor::filled(vec![1, d], 0.7)),
            w: g.constant(&Tensor::filled(vec![1, d], -1.3)),
            b: g.constant(&Tensor::filled(vec![1, 1], 2.0)),
        }
    }

    #[test]
    fn zero_w1_gives_mean_of_valid_rows() {
        let mut g = Graph::<f64>::new();
        let seq = g.constant(&Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, -4.0],
            vec![100.0, 100.0],
        ]));
        let p = params(&mut g, 2, Tensor::zeros(vec![2, 2]));
        let (s, w) = attention_pooling(&mut g, seq, &[true, true, false], &p).unwrap();
        assert_eq!(g.data(w), &[0.5, 0.5, 0.0]);
        assert_eq!(g.data(s), &[2.0, -1.0]);
    }

    #[test]
    fn single_row() {
        let mut g = Graph::<f64>::new();
        let seq = g.constant(&Tensor::from_rows(&[vec![0.25, -0.5]]));
        let p = params(&mut g, 2, Tensor::identity(2));
        let (s, w) = attention_pooling(&mut g, seq, &[true], &p).unwrap();
        assert_eq!(g.data(w), &[1.0]);
        assert_eq!(g.data(s), &[0.25, -0.5]);
    }

    #[test]
    fn hand_computed_three_rows() {
        // Independent scalar arithmetic for m = 3, d = 2.
        let v = [[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]];
        let w1 = [[0.2, -0.4], [0.9, 0.1]];
        let b1 = [0.05, -0.3];
        let w = [1.1, -0.6];
        let b = 0.4;
        let mut scores = [0.0f64; 3];
        for i in 0..3 {
            let mut f = b;
            for r in 0..2 {
                let pre: f64 = w1[r][0] * v[i][0] + w1[r][1] * v[i][1] + b1[r];
                f += w[r] * pre.tanh();
            }
            scores[i] = f;
        }
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let weights: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
        let pooled = [
            (0..3).map(|i| weights[i] * v[i][0]).sum::<f64>(),
            (0..3).map(|i| weights[i] * v[i][1]).sum::<f64>(),
        ];

        let mut g = Graph::<f64>::new();
        let seq = g.constant(&Tensor::from_rows(&v.map(|r| r.to_vec())));
        let p = PoolingParams {
            w1: g.constant(&Tensor::from_rows(&w1.map(|r| r.to_vec()))),
            b1: g.constant(&Tensor::row_vector(b1.to_vec())),
            w: g.constant(&Tensor::row_vector(w.to_vec())),
            b: g.constant(&Tensor::row_vector(vec![b])),
        };
        let (s, wt) = attention_pooling(&mut g, seq, &[true; 3], &p).unwrap();
        for (a, e) in g.data(wt).iter().zip(&weights) {
            assert!((a - e).abs() < 1e-14);
        }
        for (a, e) in g.data(s).iter().zip(&pooled) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn all_invalid_is_error() {
        let mut g = Graph::<f64>::new();
        let seq = g.constant(&Tensor::zeros(vec![2, 2]));
        let p = params(&mut g, 2, Tensor::identity(2));
        assert!(attention_pooling(&mut g, seq, &[false, false], &p).is_err());
        assert!(sum_pooling(&mut g, seq, &[false, false]).is_err());
    }

    #[test]
    fn summation_over_valid_rows() {
        let mut g = Graph::<f64>::new();
        let seq = g.constant(&Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![9.0, 9.0],
        ]));
        let (s, w) = sum_pooling(&mut g, seq, &[true, true, false]).unwrap();
        assert_eq!(g.data(s), &[4.0, 6.0]);
        assert_eq!(g.data(w), &[0.5, 0.5, 0.0]);
    }
}
