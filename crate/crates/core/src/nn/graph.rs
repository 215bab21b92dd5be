//! Tape-based reverse-mode differentiation over 2-D matrices.
//!
//! Every node holds a dense `rows × cols` value. Operations append nodes in
//! topological order, so a backward pass is a single reverse sweep over the
//! tape. Gradients accumulate across [`Graph::backward`] calls until
//! [`Graph::zero_grad`] clears them.

use super::mask::NEG;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    Sum(Var),
    Reshape(Var),
    GroupAttention {
        q: Var,
        k: Var,
        v: Var,
        len: usize,
        heads: usize,
        /// `groups × heads × len × len`
        weights: Vec<T>,
    },
    GroupWeightedSum {
        w: Var,
        x: Var,
    },
    SoftmaxXent {
        logits: Var,
        /// Row-wise softmax of the logits.
        probs: Vec<T>,
        targets: Vec<T>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<T>,
        weights: Vec<T>,
        count: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        assert_eq!(rows * cols, data.len());
        self.push(rows, cols, data, Op::Leaf, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.matrix(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node shape")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor, zero-filled when the node received none.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shape(v);
        match self.grad(v) {
            Some(g) => Tensor::new(vec![r, c], g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(vec![r, c]),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = av[i * k + p];
                if s != T::zero() {
                    axpy(s, &bv[p * n..(p + 1) * n], orow);
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul_bt {m}x{k} by ({n}x{k2})^T")));
        }
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out.push(dot(arow, &bv[j * k..(j + 1) * k]));
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMulBt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let av = &self.node(a).value;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.needs(&[a]);
        self.push(n, m, out, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        let rg = self.needs(&[a, b]);
        Ok(self.push(r, c, out, Op::Add(a, b), rg))
    }

    /// Adds a `1×cols` row (or a `1×1` scalar) to every row of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        if br != 1 || (bc != c && bc != 1) {
            return Err(Error::Shape(format!("broadcast {br}x{bc} onto {r}x{c}")));
        }
        let av = self.data(a);
        let bv = self.data(b);
        let out = av
            .iter()
            .enumerate()
            .map(|(i, &x)| x + if bc == 1 { bv[0] } else { bv[i % c] })
            .collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(r, c, out, Op::AddBroadcast(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        let rg = self.needs(&[a, b]);
        Ok(self.push(r, c, out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.data(a).iter().map(|&x| x * s).collect();
        let (r, c) = self.shape(a);
        let rg = self.needs(&[a]);
        self.push(r, c, out, Op::Scale(a, s), rg)
    }

    /// Elementwise product with a fixed (non-differentiable) factor.
    pub fn mul_const(&mut self, a: Var, factor: Vec<T>) -> Result<Var> {
        if factor.len() != self.data(a).len() {
            return Err(Error::Shape("mul_const length".into()));
        }
        let out = self
            .data(a)
            .iter()
            .zip(&factor)
            .map(|(&x, &f)| x * f)
            .collect();
        let (r, c) = self.shape(a);
        let rg = self.needs(&[a]);
        Ok(self.push(r, c, out, Op::MulConst(a, factor), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|&x| x.max(T::zero())).collect();
        let (r, c) = self.shape(a);
        let rg = self.needs(&[a]);
        self.push(r, c, out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|&x| x.tanh()).collect();
        let (r, c) = self.shape(a);
        let rg = self.needs(&[a]);
        self.push(r, c, out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let (r, c) = self.shape(a);
        let rg = self.needs(&[a]);
        self.push(r, c, out, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax of `scores + mask`.
    ///
    /// `mask` is an additive `rows × cols` matrix of `0` / [`NEG`] entries. A
    /// row in which every entry is masked produces an all-zero weight row.
    pub fn masked_softmax(&mut self, scores: Var, mask: Option<&[f64]>) -> Result<Var> {
        let (r, c) = self.shape(scores);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::Shape(format!(
                    "mask of {} entries for {r}x{c} scores",
                    m.len()
                )));
            }
        }
        let sv = self.data(scores);
        let mut out = vec![T::zero(); r * c];
        let threshold = NEG / 2.0;
        for i in 0..r {
            let row_mask = mask.map(|m| &m[i * c..(i + 1) * c]);
            if let Some(rm) = row_mask {
                if rm.iter().all(|&v| v <= threshold) {
                    continue;
                }
            }
            let z: Vec<T> = (0..c)
                .map(|j| sv[i * c + j] + row_mask.map_or(T::zero(), |rm| T::lit(rm[j])))
                .collect();
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let orow = &mut out[i * c..(i + 1) * c];
            let mut total = T::zero();
            for (o, &zj) in orow.iter_mut().zip(&z) {
                *o = (zj - max).exp();
                total = total + *o;
            }
            for o in orow.iter_mut() {
                *o = *o / total;
            }
        }
        let rg = self.needs(&[scores]);
        Ok(self.push(r, c, out, Op::Softmax(scores), rg))
    }

    /// Per-row standardisation followed by `gain` / `bias` (both `1×cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(Error::Shape(format!("layer norm width {c}")));
        }
        let xv = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let n = T::lit(c as f64);
        let eps = T::lit(eps);
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (tr, c) = self.shape(table);
        let tv = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= tr {
                return Err(Error::Shape(format!("row id {id} out of range for {tr} rows")));
            }
            out.extend_from_slice(&tv[id * c..(id + 1) * c]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            ids.len(),
            c,
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.shape(p).1;
                out.extend_from_slice(&self.data(p)[i * pc..(i + 1) * pc]);
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(r, c, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.shape(p).1 != c) {
            return Err(Error::Shape("concat_rows column mismatch".into()));
        }
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            out.extend_from_slice(self.data(p));
            r += self.shape(p).0;
        }
        let rg = self.needs(parts);
        Ok(self.push(r, c, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::Shape(format!("columns {start}..{} of {c}", start + len)));
        }
        let av = self.data(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&av[i * c + start..i * c + start + len]);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(r, len, out, Op::SliceCols { input: a, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        let rg = self.needs(&[a]);
        self.push(1, 1, vec![s], Op::Sum(a), rg)
    }

    /// Same values, new `rows × cols` layout.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::Shape(format!("reshape {r}x{c} to {rows}x{cols}")));
        }
        let out = self.data(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(rows, cols, out, Op::Reshape(a), rg))
    }

    /// Multi-head masked attention applied independently to consecutive
    /// groups of `len` rows.
    ///
    /// `q`, `k` and `v` are `(groups·len) × d`; head `h` reads columns
    /// `h·d/heads ..` of each. `mask` holds one additive `len × len` matrix
    /// per group. Scores are scaled by `1/√(d/heads)`; a fully masked query row
    /// yields a zero output row.
    pub fn group_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        len: usize,
        heads: usize,
        mask: &[f64],
    ) -> Result<Var> {
        let (rows, d) = self.shape(q);
        if self.shape(k) != (rows, d) || self.shape(v) != (rows, d) {
            return Err(Error::Shape(format!(
                "group attention over Q {:?}, K {:?}, V {:?}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            )));
        }
        if len == 0 || rows % len != 0 {
            return Err(Error::Shape(format!("{rows} rows do not split into groups of {len}")));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
        }
        let groups = rows / len;
        if mask.len() != groups * len * len {
            return Err(Error::Shape(format!(
                "mask of {} entries for {groups} groups of {len}",
                mask.len()
            )));
        }
        let dk = d / heads;
        let scale = T::lit(1.0 / (dk as f64).sqrt());
        let threshold = NEG / 2.0;
        let (qv, kv, vv) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![T::zero(); rows * d];
        let mut weights = vec![T::zero(); groups * heads * len * len];
        let mut z = vec![T::zero(); len];
        for gi in 0..groups {
            let base = gi * len;
            let gm = &mask[gi * len * len..(gi + 1) * len * len];
            for h in 0..heads {
                let col = h * dk;
                for i in 0..len {
                    let mrow = &gm[i * len..(i + 1) * len];
                    if mrow.iter().all(|&m| m <= threshold) {
                        continue;
                    }
                    let qi = &qv[(base + i) * d + col..(base + i) * d + col + dk];
                    let mut max = T::neg_infinity();
                    for j in 0..len {
                        let kj = &kv[(base + j) * d + col..(base + j) * d + col + dk];
                        z[j] = dot(qi, kj) * scale + T::lit(mrow[j]);
                        max = max.max(z[j]);
                    }
                    let wrow = &mut weights[((gi * heads + h) * len + i) * len..][..len];
                    let mut total = T::zero();
                    for j in 0..len {
                        wrow[j] = (z[j] - max).exp();
                        total = total + wrow[j];
                    }
                    let orow = &mut out[(base + i) * d + col..(base + i) * d + col + dk];
                    for j in 0..len {
                        wrow[j] = wrow[j] / total;
                        if wrow[j] != T::zero() {
                            axpy(wrow[j], &vv[(base + j) * d + col..(base + j) * d + col + dk], orow);
                        }
                    }
                }
            }
        }
        let rg = self.needs(&[q, k, v]);
        Ok(self.push(
            rows,
            d,
            out,
            Op::GroupAttention {
                q,
                k,
                v,
                len,
                heads,
                weights,
            },
            rg,
        ))
    }

    /// Attention weights recorded by a [`Graph::group_attention`] node, laid
    /// out `groups × heads × len × len`.
    pub fn attention_weights(&self, node: Var) -> Option<&[T]> {
        match &self.node(node).op {
            Op::GroupAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Row `g` of the output is `Σⱼ w[g, j] · x[g·len + j]`, with `w` of shape
    /// `groups × len` and `x` of shape `(groups·len) × d`.
    pub fn group_weighted_sum(&mut self, w: Var, x: Var) -> Result<Var> {
        let (groups, len) = self.shape(w);
        let (rows, d) = self.shape(x);
        if groups * len != rows {
            return Err(Error::Shape(format!(
                "{groups}x{len} weights for {rows} rows"
            )));
        }
        let (wv, xv) = (self.data(w), self.data(x));
        let mut out = vec![T::zero(); groups * d];
        for gi in 0..groups {
            let orow = &mut out[gi * d..(gi + 1) * d];
            for j in 0..len {
                let wj = wv[gi * len + j];
                if wj != T::zero() {
                    axpy(wj, &xv[(gi * len + j) * d..(gi * len + j + 1) * d], orow);
                }
            }
        }
        let rg = self.needs(&[w, x]);
        Ok(self.push(groups, d, out, Op::GroupWeightedSum { w, x }, rg))
    }

    /// Weighted mean binary cross-entropy computed from logits.
    ///
    /// Slots with zero weight are excluded from both the sum and the count.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let zv = self.data(logits);
        if targets.len() != zv.len() || weights.len() != zv.len() {
            return Err(Error::Shape("bce target length".into()));
        }
        let count = weights.iter().copied().sum::<T>();
        if count <= T::zero() {
            return Err(Error::Degenerate("no valid label slots".into()));
        }
        let mut total = T::zero();
        for ((&z, &y), &w) in zv.iter().zip(targets).zip(weights) {
            if w != T::zero() {
                total = total + w * (z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p());
            }
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            1,
            1,
            vec![total / count],
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Mean over rows of the cross-entropy between `targets` (one
    /// distribution per row) and the row-wise softmax of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r * c || r == 0 {
            return Err(Error::Shape("softmax cross-entropy target length".into()));
        }
        let zv = self.data(logits);
        let mut probs = vec![T::zero(); r * c];
        let mut total = T::zero();
        for i in 0..r {
            let z = &zv[i * c..(i + 1) * c];
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            for j in 0..c {
                probs[i * c + j] = (z[j] - lse).exp();
                total = total - targets[i * c + j] * (z[j] - lse);
            }
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            1,
            1,
            vec![total / T::lit(r as f64)],
            Op::SoftmaxXent {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a `1×1` node, accumulating into stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let nodes = &self.nodes;
        let mut sweep: Vec<Option<Vec<T>>> = Vec::new();
        sweep.resize_with(nodes.len(), || None);
        accumulate(nodes, &mut sweep, loss, |g| g[0] = T::one());

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(dout) = sweep[i].take() else {
                continue;
            };
            backprop_node(nodes, &mut sweep, i, &dout);
            sweep[i] = Some(dout);
        }

        if self.grads.is_empty() {
            self.grads = sweep;
            return Ok(());
        }
        self.grads.resize_with(self.nodes.len(), || None);
        for (acc, new) in self.grads.iter_mut().zip(sweep) {
            match (acc.as_mut(), new) {
                (Some(a), Some(n)) => axpy(T::one(), &n, a),
                (None, Some(n)) => *acc = Some(n),
                _ => {}
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn accumulate<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
    f(g);
}

fn backprop_node<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, dout: &[T]) {
    let node = &nodes[i];
    let (rows, cols) = (node.rows, node.cols);
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
            let n = cols;
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..m {
                    let drow = &dout[i * n..(i + 1) * n];
                    for p in 0..k {
                        ga[i * k + p] = ga[i * k + p] + dot(drow, &bv[p * n..(p + 1) * n]);
                    }
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for i in 0..m {
                    let drow = &dout[i * n..(i + 1) * n];
                    for p in 0..k {
                        let s = av[i * k + p];
                        if s != T::zero() {
                            axpy(s, drow, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            });
        }
        Op::MatMulBt(a, b) => {
            let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
            let n = cols;
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..m {
                    for j in 0..n {
                        axpy(dout[i * n + j], &bv[j * k..(j + 1) * k], &mut ga[i * k..(i + 1) * k]);
                    }
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for i in 0..m {
                    for j in 0..n {
                        axpy(dout[i * n + j], &av[i * k..(i + 1) * k], &mut gb[j * k..(j + 1) * k]);
                    }
                }
            });
        }
        Op::Transpose(a) => {
            // output is cols_a × rows_a
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..rows {
                    for j in 0..cols {
                        ga[j * rows + i] = ga[j * rows + i] + dout[i * cols + j];
                    }
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |ga| axpy(T::one(), dout, ga));
            accumulate(nodes, grads, *b, |gb| axpy(T::one(), dout, gb));
        }
        Op::AddBroadcast(a, b) => {
            accumulate(nodes, grads, *a, |ga| axpy(T::one(), dout, ga));
            accumulate(nodes, grads, *b, |gb| {
                if gb.len() == 1 {
                    gb[0] = gb[0] + dout.iter().copied().sum::<T>();
                } else {
                    for r in 0..rows {
                        axpy(T::one(), &dout[r * cols..(r + 1) * cols], gb);
                    }
                }
            });
        }
        Op::Mul(a, b) => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            accumulate(nodes, grads, *a, |ga| {
                for ((g, &d), &y) in ga.iter_mut().zip(dout).zip(bv) {
                    *g = *g + d * y;
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for ((g, &d), &x) in gb.iter_mut().zip(dout).zip(av) {
                    *g = *g + d * x;
                }
            });
        }
        Op::Scale(a, s) => {
            accumulate(nodes, grads, *a, |ga| axpy(*s, dout, ga));
        }
        Op::MulConst(a, factor) => {
            accumulate(nodes, grads, *a, |ga| {
                for ((g, &d), &f) in ga.iter_mut().zip(dout).zip(factor) {
                    *g = *g + d * f;
                }
            });
        }
        Op::Relu(a) => {
            let av = &nodes[a.0].value;
            accumulate(nodes, grads, *a, |ga| {
                for ((g, &d), &x) in ga.iter_mut().zip(dout).zip(av) {
                    if x > T::zero() {
                        *g = *g + d;
                    }
                }
            });
        }
        Op::Tanh(a) => {
            let y = &node.value;
            accumulate(nodes, grads, *a, |ga| {
                for ((g, &d), &t) in ga.iter_mut().zip(dout).zip(y) {
                    *g = *g + d * (T::one() - t * t);
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            accumulate(nodes, grads, *a, |ga| {
                for ((g, &d), &s) in ga.iter_mut().zip(dout).zip(y) {
                    *g = *g + d * s * (T::one() - s);
                }
            });
        }
        Op::Softmax(a) => {
            let w = &node.value;
            accumulate(nodes, grads, *a, |ga| {
                for r in 0..rows {
                    let wr = &w[r * cols..(r + 1) * cols];
                    let dr = &dout[r * cols..(r + 1) * cols];
                    let inner = dot(wr, dr);
                    for j in 0..cols {
                        ga[r * cols + j] = ga[r * cols + j] + wr[j] * (dr[j] - inner);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let g = &nodes[gain.0].value;
            let n = T::lit(cols as f64);
            accumulate(nodes, grads, *x, |gx| {
                let mut dh = vec![T::zero(); cols];
                for r in 0..rows {
                    let hr = &xhat[r * cols..(r + 1) * cols];
                    let dr = &dout[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        dh[j] = dr[j] * g[j];
                    }
                    let mean_dh = dh.iter().copied().sum::<T>() / n;
                    let mean_dh_h = dot(&dh, hr) / n;
                    for j in 0..cols {
                        gx[r * cols + j] =
                            gx[r * cols + j] + rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            });
            accumulate(nodes, grads, *gain, |gg| {
                for r in 0..rows {
                    for j in 0..cols {
                        gg[j] = gg[j] + dout[r * cols + j] * xhat[r * cols + j];
                    }
                }
            });
            accumulate(nodes, grads, *bias, |gb| {
                for r in 0..rows {
                    axpy(T::one(), &dout[r * cols..(r + 1) * cols], gb);
                }
            });
        }
        Op::Gather { table, ids } => {
            accumulate(nodes, grads, *table, |gt| {
                for (r, &id) in ids.iter().enumerate() {
                    axpy(
                        T::one(),
                        &dout[r * cols..(r + 1) * cols],
                        &mut gt[id * cols..(id + 1) * cols],
                    );
                }
            });
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for p in parts {
                let pc = nodes[p.0].cols;
                accumulate(nodes, grads, *p, |gp| {
                    for r in 0..rows {
                        axpy(
                            T::one(),
                            &dout[r * cols + offset..r * cols + offset + pc],
                            &mut gp[r * pc..(r + 1) * pc],
                        );
                    }
                });
                offset += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                accumulate(nodes, grads, *p, |gp| {
                    axpy(T::one(), &dout[offset..offset + len], gp);
                });
                offset += len;
            }
        }
        Op::SliceCols { input, start } => {
            let ic = nodes[input.0].cols;
            accumulate(nodes, grads, *input, |gi| {
                for r in 0..rows {
                    axpy(
                        T::one(),
                        &dout[r * cols..(r + 1) * cols],
                        &mut gi[r * ic + start..r * ic + start + cols],
                    );
                }
            });
        }
        Op::SoftmaxXent {
            logits,
            probs,
            targets,
        } => {
            let r = nodes[logits.0].rows;
            let scale = dout[0] / T::lit(r as f64);
            accumulate(nodes, grads, *logits, |gz| {
                for ((g, &p), &t) in gz.iter_mut().zip(probs).zip(targets) {
                    *g = *g + scale * (p - t);
                }
            });
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, |ga| axpy(T::one(), dout, ga));
        }
        Op::GroupAttention {
            q,
            k,
            v,
            len,
            heads,
            weights,
        } => {
            let (len, heads, d) = (*len, *heads, cols);
            let dk = d / heads;
            let groups = rows / len;
            let scale = T::lit(1.0 / (dk as f64).sqrt());
            let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
            // Score gradients first; they feed both dQ and dK.
            let mut dscores = vec![T::zero(); weights.len()];
            let mut dw = vec![T::zero(); len];
            for gi in 0..groups {
                let base = gi * len;
                for h in 0..heads {
                    let col = h * dk;
                    for i in 0..len {
                        let off = ((gi * heads + h) * len + i) * len;
                        let wrow = &weights[off..off + len];
                        let drow = &dout[(base + i) * d + col..(base + i) * d + col + dk];
                        let mut inner = T::zero();
                        for j in 0..len {
                            dw[j] = if wrow[j] != T::zero() {
                                dot(drow, &vv[(base + j) * d + col..(base + j) * d + col + dk])
                            } else {
                                T::zero()
                            };
                            inner = inner + wrow[j] * dw[j];
                        }
                        for j in 0..len {
                            dscores[off + j] = wrow[j] * (dw[j] - inner) * scale;
                        }
                    }
                }
            }
            let each = |f: &mut dyn FnMut(usize, usize, usize, usize, T)| {
                for gi in 0..groups {
                    for h in 0..heads {
                        for i in 0..len {
                            let off = ((gi * heads + h) * len + i) * len;
                            for j in 0..len {
                                f(gi * len + i, gi * len + j, h * dk, off + j, weights[off + j]);
                            }
                        }
                    }
                }
            };
            accumulate(nodes, grads, *q, |gq| {
                each(&mut |ri, rj, col, s, _| {
                    let ds = dscores[s];
                    if ds != T::zero() {
                        axpy(ds, &kv[rj * d + col..rj * d + col + dk], &mut gq[ri * d + col..ri * d + col + dk]);
                    }
                })
            });
            accumulate(nodes, grads, *k, |gk| {
                each(&mut |ri, rj, col, s, _| {
                    let ds = dscores[s];
                    if ds != T::zero() {
                        axpy(ds, &qv[ri * d + col..ri * d + col + dk], &mut gk[rj * d + col..rj * d + col + dk]);
                    }
                })
            });
            accumulate(nodes, grads, *v, |gv| {
                each(&mut |ri, rj, col, _, w| {
                    if w != T::zero() {
                        axpy(w, &dout[ri * d + col..ri * d + col + dk], &mut gv[rj * d + col..rj * d + col + dk]);
                    }
                })
            });
        }
        Op::GroupWeightedSum { w, x } => {
            let (groups, len) = (nodes[w.0].rows, nodes[w.0].cols);
            let d = cols;
            let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
            accumulate(nodes, grads, *w, |gw| {
                for gi in 0..groups {
                    let drow = &dout[gi * d..(gi + 1) * d];
                    for j in 0..len {
                        let r = gi * len + j;
                        gw[r] = gw[r] + dot(drow, &xv[r * d..(r + 1) * d]);
                    }
                }
            });
            accumulate(nodes, grads, *x, |gx| {
                for gi in 0..groups {
                    let drow = &dout[gi * d..(gi + 1) * d];
                    for j in 0..len {
                        let r = gi * len + j;
                        if wv[r] != T::zero() {
                            axpy(wv[r], drow, &mut gx[r * d..(r + 1) * d]);
                        }
                    }
                }
            });
        }
        Op::Sum(a) => {
            let d = dout[0];
            accumulate(nodes, grads, *a, |ga| {
                for g in ga.iter_mut() {
                    *g = *g + d;
                }
            });
        }
        Op::BceLogits {
            logits,
            targets,
            weights,
            count,
        } => {
            let zv = &nodes[logits.0].value;
            let d = dout[0];
            accumulate(nodes, grads, *logits, |gz| {
                for (j, g) in gz.iter_mut().enumerate() {
                    if weights[j] != T::zero() {
                        *g = *g + d * weights[j] * (sigmoid(zv[j]) - targets[j]) / *count;
                    }
                }
            });
        }
    }
}
