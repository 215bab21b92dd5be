use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::nn::{
    FeedForwardParams, Graph, MasEncParams, MultiHeadParams, ParamTree, PoolingParams, Scalar, Tensor, Var,
};

/// Every learnable array of the network, generic over the leaf type so the
/// same structure holds stored tensors or graph handles.
#[derive(Clone, Debug, PartialEq)]
pub struct BiteNetParams<L> {
    /// `(|X| + 1) × d`; row 0 is the padding code and stays zero.
    pub code_embedding: L,
    pub code_stack: Vec<MasEncParams<L>>,
    pub code_pool: Option<PoolingParams<L>>,
    /// `interval_days × d`
    pub interval_table: Option<L>,
    pub fw_stack: Vec<MasEncParams<L>>,
    pub bw_stack: Vec<MasEncParams<L>>,
    pub fw_pool: Option<PoolingParams<L>>,
    pub bw_pool: Option<PoolingParams<L>>,
    /// `2d × output`
    pub head_w: L,
    /// `1 × output`
    pub head_b: L,
}

pub type Params<T> = BiteNetParams<Tensor<T>>;

impl<L> BiteNetParams<L> {
    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> BiteNetParams<M> {
        let stack = |s: &[MasEncParams<L>], f: &mut dyn FnMut(&L) -> M| {
            s.iter().map(|b| b.map(&mut |l| f(l))).collect::<Vec<_>>()
        };
        BiteNetParams {
            code_embedding: f(&self.code_embedding),
            code_stack: stack(&self.code_stack, f),
            code_pool: self.code_pool.as_ref().map(|p| p.map(f)),
            interval_table: self.interval_table.as_ref().map(&mut *f),
            fw_stack: stack(&self.fw_stack, f),
            bw_stack: stack(&self.bw_stack, f),
            fw_pool: self.fw_pool.as_ref().map(|p| p.map(f)),
            bw_pool: self.bw_pool.as_ref().map(|p| p.map(f)),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }

    /// Exchanges the forward and backward stacks and pools.
    pub fn swap_directions(&mut self) {
        std::mem::swap(&mut self.fw_stack, &mut self.bw_stack);
        std::mem::swap(&mut self.fw_pool, &mut self.bw_pool);
    }
}

impl<L> ParamTree<L> for BiteNetParams<L> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        f(format!("{prefix}code_embedding"), &self.code_embedding);
        for (i, b) in self.code_stack.iter().enumerate() {
            b.visit(&format!("{prefix}code_stack.{i}"), f);
        }
        if let Some(p) = &self.code_pool {
            p.visit(&format!("{prefix}code_pool"), f);
        }
        if let Some(t) = &self.interval_table {
            f(format!("{prefix}interval_table"), t);
        }
        for (i, b) in self.fw_stack.iter().enumerate() {
            b.visit(&format!("{prefix}fw_stack.{i}"), f);
        }
        for (i, b) in self.bw_stack.iter().enumerate() {
            b.visit(&format!("{prefix}bw_stack.{i}"), f);
        }
        if let Some(p) = &self.fw_pool {
            p.visit(&format!("{prefix}fw_pool"), f);
        }
        if let Some(p) = &self.bw_pool {
            p.visit(&format!("{prefix}bw_pool"), f);
        }
        f(format!("{prefix}head_w"), &self.head_w);
        f(format!("{prefix}head_b"), &self.head_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut L)) {
        f(format!("{prefix}code_embedding"), &mut self.code_embedding);
        for (i, b) in self.code_stack.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}code_stack.{i}"), f);
        }
        if let Some(p) = &mut self.code_pool {
            p.visit_mut(&format!("{prefix}code_pool"), f);
        }
        if let Some(t) = &mut self.interval_table {
            f(format!("{prefix}interval_table"), t);
        }
        for (i, b) in self.fw_stack.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}fw_stack.{i}"), f);
        }
        for (i, b) in self.bw_stack.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}bw_stack.{i}"), f);
        }
        if let Some(p) = &mut self.fw_pool {
            p.visit_mut(&format!("{prefix}fw_pool"), f);
        }
        if let Some(p) = &mut self.bw_pool {
            p.visit_mut(&format!("{prefix}bw_pool"), f);
        }
        f(format!("{prefix}head_w"), &mut self.head_w);
        f(format!("{prefix}head_b"), &mut self.head_b);
    }
}

impl<T: Scalar> Params<T> {
    /// Zero-filled parameters with the layout implied by `config`.
    pub fn zeros(config: &ModelConfig, id_space: usize) -> Self {
        let d = config.dim;
        let z = |r: usize, c: usize| Tensor::<T>::zeros(vec![r, c]);
        let block = || MasEncParams {
            attention: MultiHeadParams {
                w_q: z(d, d),
                w_k: z(d, d),
                w_v: z(d, d),
                w_o: z(d, d),
                heads: config.heads,
            },
            ffn: FeedForwardParams {
                w1: z(d, config.ffn_dim()),
                b1: z(1, config.ffn_dim()),
                w2: z(config.ffn_dim(), d),
                b2: z(1, d),
            },
            ln1_gain: z(1, d),
            ln1_bias: z(1, d),
            ln2_gain: z(1, d),
            ln2_bias: z(1, d),
        };
        let pool = || PoolingParams {
            w1: z(d, d),
            b1: z(1, d),
            w: z(1, d),
            b: z(1, 1),
        };
        let stack = || (0..config.depth).map(|_| block()).collect::<Vec<_>>();
        Self {
            code_embedding: z(id_space, d),
            code_stack: stack(),
            code_pool: config.uses_pooling().then(pool),
            interval_table: config.uses_intervals().then(|| z(config.interval_days, d)),
            fw_stack: stack(),
            bw_stack: stack(),
            fw_pool: config.uses_pooling().then(pool),
            bw_pool: config.uses_pooling().then(pool),
            head_w: z(2 * d, config.output_width()),
            head_b: z(1, config.output_width()),
        }
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    pub fn num_arrays(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _| n += 1);
        n
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }

    /// Loads every tensor into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> BiteNetParams<Var> {
        self.map(&mut |t| g.leaf(t, requires_grad))
    }

    pub fn zero_padding_row(&mut self) {
        let d = self.code_embedding.cols();
        for v in &mut self.code_embedding.data_mut()[..d] {
            *v = T::zero();
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        self.map(&mut |t| t.cast())
    }
}

/// Glorot-uniform matrices, zero biases, unit layer-norm gains, zero
/// interval table and a zero padding embedding row. Deterministic in `seed`.
pub fn init_params<T: Scalar>(config: &ModelConfig, id_space: usize, seed: u64) -> Result<Params<T>> {
    config.validate()?;
    let mut params = Params::<T>::zeros(config, id_space);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.visit_mut("", &mut |name, t| {
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        let zero = matches!(leaf, "b" | "b1" | "b2" | "head_b" | "ln1_bias" | "ln2_bias" | "interval_table");
        if zero {
            return;
        }
        if leaf.ends_with("_gain") {
            t.data_mut().iter_mut().for_each(|v| *v = T::one());
            return;
        }
        let (fan_in, fan_out) = (t.rows(), t.cols());
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in t.data_mut() {
            *v = T::lit(rng.gen_range(-bound..=bound));
        }
    });
    params.zero_padding_row();
    Ok(params)
}

/// Closed-form parameter count for a configuration.
pub fn parameter_count(config: &ModelConfig, id_space: usize) -> usize {
    let d = config.dim;
    let ff = config.ffn_dim();
    let block = 4 * d * d + (d * ff + ff + ff * d + d) + 4 * d;
    let pool = pooling_layer_count(d);
    let mut n = id_space * d + 3 * config.depth * block;
    if config.uses_pooling() {
        n += 3 * pool;
    }
    if config.uses_intervals() {
        n += config.interval_days * d;
    }
    n + 2 * d * config.output_width() + config.output_width()
}

/// Parameters in one attention pooling layer: `W1`, `b1`, `w` and `b`.
pub fn pooling_layer_count(d: usize) -> usize {
    d * d + d + d + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{Task, Variant};

    fn small() -> ModelConfig {
        ModelConfig {
            dim: 8,
            depth: 1,
            heads: 2,
            dropout: 0.1,
            interval_days: 100,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = init_params::<f32>(&small(), 11, 5).unwrap();
        let b = init_params::<f32>(&small(), 11, 5).unwrap();
        let c = init_params::<f32>(&small(), 11, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn interval_table_and_padding_start_at_zero() {
        let p = init_params::<f64>(&small(), 11, 1).unwrap();
        assert!(p.interval_table.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.code_embedding.row(0).iter().all(|&v| v == 0.0));
        assert!(p.code_embedding.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn init_bounds() {
        let p = init_params::<f64>(&small(), 11, 1).unwrap();
        let bound = (6.0f64 / 16.0).sqrt();
        let wq = &p.code_stack[0].attention.w_q;
        assert!(wq.data().iter().all(|v| v.abs() <= bound));
        assert!(p.code_stack[0].ln1_gain.data().iter().all(|&v| v == 1.0));
        assert!(p.code_stack[0].ffn.b1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn count_for_small_readmission_model() {
        // Written-out count for d = 8, N = 1, h = 2, |X| = 10, m_days = 100.
        let d = 8;
        let embedding = 11 * d; // padding row included
        let attention = 4 * d * d;
        let ffn = d * 32 + 32 + 32 * d + d;
        let norms = 4 * d;
        let block = attention + ffn + norms;
        let pools = 3 * (d * d + 2 * d + 1);
        let interval = 100 * d;
        let head = 2 * d + 1;
        let expected = embedding + 3 * block + pools + interval + head;
        assert_eq!(expected, 3668);

        let p = init_params::<f32>(&small(), 11, 0).unwrap();
        let enumerated: usize = p.named().iter().map(|(_, t)| t.len()).sum();
        assert_eq!(enumerated, expected);
        assert_eq!(parameter_count(&small(), 11), expected);
    }

    #[test]
    fn ablation_counts() {
        let full = small();
        let id = 11;
        let base = parameter_count(&full, id);
        let with = |v: Variant| {
            let c = ModelConfig { variant: v, ..full.clone() };
            init_params::<f32>(&c, id, 0).unwrap().num_parameters()
        };
        assert_eq!(base - with(Variant::Attention), 3 * pooling_layer_count(8));
        assert_eq!(base - with(Variant::Interval), 100 * 8);
        assert_eq!(with(Variant::DireMask), base);
    }

    #[test]
    fn diagnosis_head_width() {
        let c = ModelConfig {
            task: Task::Diagnosis,
            num_categories: 7,
            ..small()
        };
        let p = init_params::<f32>(&c, 11, 0).unwrap();
        assert_eq!(p.head_w.shape(), &[16, 7]);
        assert!(init_params::<f32>(&ModelConfig { num_categories: 0, ..c }, 11, 0).is_err());
    }

    #[test]
    fn directional_stacks_are_distinct() {
        let p = init_params::<f32>(&small(), 11, 0).unwrap();
        assert_ne!(p.fw_stack, p.bw_stack);
        assert_ne!(p.fw_pool, p.bw_pool);
    }
}
