use super::graph::{Graph, Var};
use super::mask::AttentionMask;
use super::tensor::Scalar;
use super::ParamTree;
use crate::error::{Error, Result};

/// Projections for multi-head self-attention.
///
/// `w_q`, `w_k` and `w_v` are `d × d`; column block `i·d_k .. (i+1)·d_k` is
/// the projection of head `i`. `w_o` maps the concatenated heads back to `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadParams<L> {
    pub w_q: L,
    pub w_k: L,
    pub w_v: L,
    pub w_o: L,
    pub heads: usize,
}

impl<L> MultiHeadParams<L> {
    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> MultiHeadParams<M> {
        MultiHeadParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
            heads: self.heads,
        }
    }
}

impl<L> ParamTree<L> for MultiHeadParams<L> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        f(format!("{prefix}.w_q"), &self.w_q);
        f(format!("{prefix}.w_k"), &self.w_k);
        f(format!("{prefix}.w_v"), &self.w_v);
        f(format!("{prefix}.w_o"), &self.w_o);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut L)) {
        f(format!("{prefix}.w_q"), &mut self.w_q);
        f(format!("{prefix}.w_k"), &mut self.w_k);
        f(format!("{prefix}.w_v"), &mut self.w_v);
        f(format!("{prefix}.w_o"), &mut self.w_o);
    }
}

/// `softmax(Q·Kᵀ/√d + M) · V`.
///
/// Returns the attended output and the weight matrix. Rows whose mask entries
/// are all disallowed get zero weights and therefore a zero output row.
pub fn masked_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<(Var, Var)> {
    let (mq, dq) = g.shape(q);
    let (mk, dk) = g.shape(k);
    let (mv, _) = g.shape(v);
    if dq != dk || mk != mv {
        return Err(Error::Shape(format!(
            "attention over Q {mq}x{dq}, K {mk}x{dk}, V with {mv} rows"
        )));
    }
    if let Some(m) = mask {
        if m.len() != mq || m.len() != mk {
            return Err(Error::Shape(format!(
                "{0}x{0} mask for {mq} queries and {mk} keys",
                m.len()
            )));
        }
    }
    let scores = g.matmul_bt(q, k)?;
    let scaled = g.scale(scores, T::lit(1.0 / (dq as f64).sqrt()));
    let weights = g.masked_softmax(scaled, mask.map(AttentionMask::matrix))?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head self-attention with `Q = K = V = x`.
pub fn multi_head<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mask: Option<&AttentionMask>,
    p: &MultiHeadParams<Var>,
) -> Result<Var> {
    let (m, _) = g.shape(x);
    if let Some(mk) = mask {
        if mk.len() != m {
            return Err(Error::Shape(format!("{0}x{0} mask for {m} rows", mk.len())));
        }
    }
    let open;
    let matrix = match mask {
        Some(mk) => mk.matrix(),
        None => {
            open = vec![0.0; m * m];
            &open
        }
    };
    group_multi_head(g, x, m, matrix, p)
}

/// [`multi_head`] over consecutive groups of `len` rows, each group with its
/// own `len × len` block of `masks`.
pub fn group_multi_head<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    len: usize,
    masks: &[f64],
    p: &MultiHeadParams<Var>,
) -> Result<Var> {
    let (_, d) = g.shape(x);
    if p.heads == 0 || d % p.heads != 0 {
        return Err(Error::Config(format!(
            "width {d} is not divisible by {} heads",
            p.heads
        )));
    }
    let q = g.matmul(x, p.w_q)?;
    let k = g.matmul(x, p.w_k)?;
    let v = g.matmul(x, p.w_v)?;
    let heads = g.group_attention(q, k, v, len, p.heads, masks)?;
    g.matmul(heads, p.w_o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mask::MaskKind;
    use crate::nn::{grad_check, Tensor};

    fn rows(r: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(r)
    }

    #[test]
    fn singleton_attention() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(&rows(&[vec![1.0]]));
        let v = g.constant(&rows(&[vec![5.0]]));
        let (out, w) = masked_attention(&mut g, q, q, v, None).unwrap();
        assert_eq!(g.data(out), &[5.0]);
        assert_eq!(g.data(w), &[1.0]);
    }

    #[test]
    fn diagonal_mask_swaps_rows() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]));
        let v = g.constant(&rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let mask = AttentionMask::build(MaskKind::Diagonal, 2).unwrap();
        let (out, _) = masked_attention(&mut g, x, x, v, Some(&mask)).unwrap();
        assert_eq!(g.data(out), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn two_by_two_hand_softmax() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::identity(2));
        let (out, w) = masked_attention(&mut g, x, x, x, None).unwrap();
        // Scores are 1/sqrt(2) on the diagonal and 0 elsewhere.
        let e = (1.0f64 / 2f64.sqrt()).exp();
        let s1 = e / (e + 1.0);
        let expected = [s1, 1.0 - s1, 1.0 - s1, s1];
        for (a, b) in g.data(w).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        // V is the identity so the output equals the weights.
        for (a, b) in g.data(out).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&Tensor::zeros(vec![2, 3]));
        let b = g.constant(&Tensor::zeros(vec![2, 2]));
        assert!(masked_attention(&mut g, a, b, b, None).is_err());
        let m = AttentionMask::build(MaskKind::None, 3).unwrap();
        assert!(masked_attention(&mut g, a, a, a, Some(&m)).is_err());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::zeros(vec![2, 3]));
        let w = g.constant(&Tensor::identity(3));
        let p = MultiHeadParams {
            w_q: w,
            w_k: w,
            w_v: w,
            w_o: w,
            heads: 2,
        };
        assert!(matches!(
            multi_head(&mut g, x, None, &p),
            Err(Error::Config(_))
        ));
    }

    fn random(r: usize, c: usize, seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn block_identity_heads_match_two_half_attentions() {
        let (m, d) = (4, 6);
        let xt = random(m, d, 3);
        let mask = AttentionMask::build(MaskKind::Forward, m).unwrap();

        let mut g = Graph::<f64>::new();
        let x = g.constant(&xt);
        let id = g.constant(&Tensor::identity(d));
        let p = MultiHeadParams {
            w_q: id,
            w_k: id,
            w_v: id,
            w_o: id,
            heads: 2,
        };
        let fused = multi_head(&mut g, x, Some(&mask), &p).unwrap();

        let mut halves = Vec::new();
        for h in 0..2 {
            let xh = g.slice_cols(x, 3 * h, 3).unwrap();
            halves.push(masked_attention(&mut g, xh, xh, xh, Some(&mask)).unwrap().0);
        }
        let reference = g.concat_cols(&halves).unwrap();
        for (a, b) in g.data(fused).iter().zip(g.data(reference)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn groups_are_independent_attentions() {
        let (len, d) = (3, 4);
        let kinds = [MaskKind::Diagonal, MaskKind::Forward, MaskKind::Backward];
        let (qt, kt, vt) = (random(9, d, 1), random(9, d, 2), random(9, d, 4));
        let masks: Vec<f64> = kinds
            .iter()
            .flat_map(|&k| AttentionMask::build(k, len).unwrap().matrix().to_vec())
            .collect();

        let mut g = Graph::<f64>::new();
        let (q, k, v) = (g.constant(&qt), g.constant(&kt), g.constant(&vt));
        let out = g.group_attention(q, k, v, len, 1, &masks).unwrap();
        let whole = g.data(out).to_vec();
        for (gi, &kind) in kinds.iter().enumerate() {
            let rows = |t: &Tensor<f64>| t.data()[gi * len * d..(gi + 1) * len * d].to_vec();
            let mut h = Graph::<f64>::new();
            let qs = h.matrix(len, d, rows(&qt));
            let ks = h.matrix(len, d, rows(&kt));
            let vs = h.matrix(len, d, rows(&vt));
            let mask = AttentionMask::build(kind, len).unwrap();
            let (o, _) = masked_attention(&mut h, qs, ks, vs, Some(&mask)).unwrap();
            for (a, b) in whole[gi * len * d..(gi + 1) * len * d].iter().zip(h.data(o)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn group_attention_gradient() {
        let (len, d) = (3, 4);
        let masks: Vec<f64> = [MaskKind::Forward, MaskKind::Diagonal]
            .iter()
            .flat_map(|&k| AttentionMask::build(k, len).unwrap().matrix().to_vec())
            .collect();
        let probe = random(6, d, 9);
        let err = grad_check(
            |g, v| {
                let out = g.group_attention(v[0], v[1], v[2], len, 2, &masks)?;
                let probe = g.constant(&probe);
                let weighted = g.mul(out, probe)?;
                Ok(g.sum(weighted))
            },
            &[random(6, d, 5), random(6, d, 6), random(6, d, 7)],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn multi_head_gradient() {
        let (m, d) = (4, 4);
        let mask = AttentionMask::build(MaskKind::Backward, m).unwrap();
        let err = grad_check(
            |g, v| {
                let p = MultiHeadParams {
                    w_q: v[1],
                    w_k: v[2],
                    w_v: v[3],
                    w_o: v[4],
                    heads: 2,
                };
                let out = multi_head(g, v[0], Some(&mask), &p)?;
                let sq = g.mul(out, out)?;
                Ok(g.sum(sq))
            },
            &[
                random(m, d, 1),
                random(d, d, 2),
                random(d, d, 3),
                random(d, d, 4),
                random(d, d, 5),
            ],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
