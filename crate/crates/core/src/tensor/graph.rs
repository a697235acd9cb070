use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};
use crate::error::{GenexError, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One attention problem inside a packed batch.
///
/// Query rows `q_start..q_start+q_len` of the query source attend over key
/// rows `k_start..k_start+k_len`; `allowed` is row-major `q_len × k_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnBlock {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
    pub allowed: Vec<bool>,
}

impl AttnBlock {
    pub fn full(q_start: usize, q_len: usize, k_start: usize, k_len: usize) -> Self {
        AttnBlock {
            q_start,
            q_len,
            k_start,
            k_len,
            allowed: vec![true; q_len * k_len],
        }
    }
}

/// The attention blocks of one packed batch. Output rows follow block order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttnLayout {
    pub blocks: Vec<AttnBlock>,
}

impl AttnLayout {
    pub fn out_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.q_len).sum()
    }

    fn validate(&self, q_rows: usize, k_rows: usize) -> Result<()> {
        for b in &self.blocks {
            if b.q_start + b.q_len > q_rows || b.k_start + b.k_len > k_rows {
                return Err(GenexError::Index {
                    what: "attention block",
                    index: (b.q_start + b.q_len).max(b.k_start + b.k_len),
                    size: q_rows.max(k_rows),
                });
            }
            if b.allowed.len() != b.q_len * b.k_len {
                return Err(GenexError::Shape {
                    op: "attention mask",
                    left: vec![b.q_len, b.k_len],
                    right: vec![b.allowed.len()],
                });
            }
        }
        Ok(())
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Dropout(Var, Vec<T>),
    MaskedSoftmax(Var, Vec<bool>),
    LogSoftmax(Var),
    CrossEntropy {
        log_probs: Var,
        gold: Vec<usize>,
        smoothing: T,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: Arc<AttnLayout>,
        probs: Vec<T>,
        prob_offsets: Vec<usize>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of executed operations. Node order is execution order, so a single
/// reverse sweep over the node list visits every node after all its consumers.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let rows = shape.iter().product::<usize>() / cols.max(1);
    (rows, cols)
}

fn add_into<T: Scalar>(dst: &mut Option<Vec<T>>, src: &[T]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b),
        None => *dst = Some(src.to_vec()),
    }
}

/// Numerically stable softmax over the allowed entries of one row. Entries
/// that are not allowed are never read and come out as exactly zero.
pub(crate) fn masked_softmax_row<T: Scalar>(logits: &mut [T], allowed: &[bool]) -> bool {
    let mut max = T::neg_infinity();
    for (x, &ok) in logits.iter().zip(allowed) {
        if ok && *x > max {
            max = *x;
        }
    }
    if !allowed.iter().any(|&a| a) {
        return false;
    }
    if max == T::neg_infinity() {
        // every allowed logit is NaN or -inf; let NaN surface downstream
        max = T::zero();
    }
    let mut sum = T::zero();
    for (x, &ok) in logits.iter_mut().zip(allowed) {
        if ok {
            *x = (*x - max).exp();
            sum = sum + *x;
        } else {
            *x = T::zero();
        }
    }
    for (x, &ok) in logits.iter_mut().zip(allowed) {
        if ok {
            *x = *x / sum;
        }
    }
    true
}

impl<T: Scalar> Graph<T> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            rng: None,
        }
    }

    /// Training-mode graph whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph node shapes are consistent")
    }

    /// Records a tensor as a leaf; it is differentiable iff the tensor requires grad.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(GenexError::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, T::zero(), &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(GenexError::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    /// Adds a length-`c` bias to every row of an `r × c` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if self.shape(bias).iter().product::<usize>() != cols {
            return Err(GenexError::Shape {
                op: "add_bias",
                left: self.shape(x).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &w)| v + w))
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// Normalizes each row over the last axis (population variance), then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(x));
        for p in [gain, bias] {
            if self.shape(p).iter().product::<usize>() != d {
                return Err(GenexError::Shape {
                    op: "layer_norm",
                    left: self.shape(x).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row gather with scatter-add gradient; doubles as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        let src = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(GenexError::Index {
                    what: "row gather",
                    index: i,
                    size: rows,
                });
            }
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            vec![idx.len(), cols],
            out,
            Op::GatherRows(x, idx.to_vec()),
            rg,
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = rows_cols(self.shape(parts[0])).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if c != cols {
                return Err(GenexError::Shape {
                    op: "concat_rows",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = rows_cols(self.shape(parts[0])).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if r != rows {
                return Err(GenexError::Shape {
                    op: "concat_cols",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Inverted dropout: kept units are scaled by `1/(1-p)`. Identity in
    /// evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Dropout(x, mask), rg)
    }

    /// Softmax over the last axis restricted to `allowed` positions.
    pub fn masked_softmax(&mut self, x: Var, allowed: &[bool]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if allowed.len() != rows * cols {
            return Err(GenexError::Shape {
                op: "masked_softmax",
                left: self.shape(x).to_vec(),
                right: vec![allowed.len()],
            });
        }
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            if !masked_softmax_row(&mut out[span.clone()], &allowed[span]) {
                return Err(GenexError::EmptyAttentionRow { row: r });
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::MaskedSoftmax(x, allowed.to_vec()),
            rg,
        ))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(x));
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(cols).take(rows) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::LogSoftmax(x), rg)
    }

    /// Mean over rows of the cross-entropy between `log_probs` and the
    /// smoothed target `(1-ε)·onehot(gold) + ε/V`.
    pub fn cross_entropy_smoothed(
        &mut self,
        log_probs: Var,
        gold: &[usize],
        smoothing: f64,
    ) -> Result<Var> {
        let (rows, v) = rows_cols(self.shape(log_probs));
        if gold.len() != rows {
            return Err(GenexError::Shape {
                op: "cross_entropy",
                left: self.shape(log_probs).to_vec(),
                right: vec![gold.len()],
            });
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= v) {
            return Err(GenexError::Index {
                what: "gold token",
                index: bad,
                size: v,
            });
        }
        let eps = T::of(smoothing);
        let uniform = eps / T::of(v as f64);
        let lp = self.value(log_probs);
        let mut total = T::zero();
        for (r, &g) in gold.iter().enumerate() {
            let row = &lp[r * v..(r + 1) * v];
            let row_sum: T = row.iter().copied().sum();
            total = total - (T::one() - eps) * row[g] - uniform * row_sum;
        }
        let loss = total / T::of(rows as f64);
        let rg = self.rg(&[log_probs]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                log_probs,
                gold: gold.to_vec(),
                smoothing: eps,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention over a packed batch.
    ///
    /// `q` supplies query rows, `k`/`v` share key rows; all have width
    /// `heads × head_dim`. Each head scores with `1/√head_dim`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: Arc<AttnLayout>,
    ) -> Result<Var> {
        let (q_rows, d) = rows_cols(self.shape(q));
        let (k_rows, dk) = rows_cols(self.shape(k));
        if self.shape(k) != self.shape(v) || dk != d || heads == 0 || d % heads != 0 {
            return Err(GenexError::Shape {
                op: "attention",
                left: self.shape(q).to_vec(),
                right: self.shape(k).to_vec(),
            });
        }
        layout.validate(q_rows, k_rows)?;
        let hd = d / heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let (qs, ks, vs) = (self.value(q), self.value(k), self.value(v));
        let out_rows = layout.out_rows();
        let mut out = vec![T::zero(); out_rows * d];
        let mut prob_offsets = Vec::with_capacity(layout.blocks.len());
        let mut total = 0;
        for b in &layout.blocks {
            prob_offsets.push(total);
            total += heads * b.q_len * b.k_len;
        }
        let mut probs = vec![T::zero(); total];
        let mut out_row = 0;
        for (bi, b) in layout.blocks.iter().enumerate() {
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for r in 0..b.q_len {
                    let qrow = &qs[(b.q_start + r) * d..][cols.clone()];
                    let allowed = &b.allowed[r * b.k_len..(r + 1) * b.k_len];
                    let p_off = prob_offsets[bi] + (h * b.q_len + r) * b.k_len;
                    let prow = &mut probs[p_off..p_off + b.k_len];
                    for c in 0..b.k_len {
                        if allowed[c] {
                            let krow = &ks[(b.k_start + c) * d..][cols.clone()];
                            let dot: T = qrow.iter().zip(krow).map(|(&a, &bb)| a * bb).sum();
                            prow[c] = dot * scale;
                        }
                    }
                    if !masked_softmax_row(prow, allowed) {
                        return Err(GenexError::EmptyAttentionRow { row: out_row + r });
                    }
                    let orow = &mut out[(out_row + r) * d..][cols.clone()];
                    for c in 0..b.k_len {
                        if allowed[c] {
                            let p = prow[c];
                            let vrow = &vs[(b.k_start + c) * d..][cols.clone()];
                            orow.iter_mut().zip(vrow).for_each(|(o, &x)| *o = *o + p * x);
                        }
                    }
                }
            }
            out_row += b.q_len;
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            vec![out_rows, d],
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
                prob_offsets,
            },
            rg,
        ))
    }

    /// Attention weights recorded by an attention node, as `(block, head)`
    /// matrices of shape `q_len × k_len`.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Vec<Vec<T>>>> {
        match &self.node(v).op {
            Op::Attention {
                heads,
                layout,
                probs,
                prob_offsets,
                ..
            } => Some(
                layout
                    .blocks
                    .iter()
                    .zip(prob_offsets)
                    .map(|(b, &off)| {
                        (0..*heads)
                            .map(|h| {
                                let s = off + h * b.q_len * b.k_len;
                                probs[s..s + b.q_len * b.k_len].to_vec()
                            })
                            .collect()
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into the tensor's gradient buffer.
    pub fn accumulate_grad(&self, v: Var, t: &mut Tensor<T>) {
        if let Some(g) = self.grad(v) {
            t.add_grad(g);
        }
    }

    /// Reverse sweep from a scalar loss. Gradients of every differentiable
    /// node reachable from `loss` become available through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(GenexError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.node(loss).requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, false, self.value(*b), true, T::zero(), &mut da);
                    add_into(&mut grads[a.0], &da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, self.value(*a), true, g, false, T::zero(), &mut db);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if self.wants(*p) {
                        add_into(&mut grads[p.0], g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d: Vec<T> = g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if self.wants(*b) {
                    let d: Vec<T> = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if self.wants(*bias) {
                    let cols = self.value(*bias).len();
                    let mut db = vec![T::zero(); cols];
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    let d: Vec<T> = g.iter().map(|&v| v * *c).collect();
                    add_into(&mut grads[x.0], &d);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let d: Vec<T> = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    add_into(&mut grads[x.0], &d);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let d = vec![g[0]; self.value(*x).len()];
                    add_into(&mut grads[x.0], &d);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, d) = rows_cols(&node.shape);
                let gv = self.value(*gain);
                if self.wants(*x) {
                    let dn = T::of(d as f64);
                    let mut dx = vec![T::zero(); rows * d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut sum_dxh = T::zero();
                        let mut sum_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            sum_dxh = sum_dxh + dxh;
                            sum_dxh_xh = sum_dxh_xh + dxh * xh[j];
                        }
                        let f = inv_std[r] / dn;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            dx[r * d + j] = f * (dn * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                if self.wants(*gain) {
                    let mut dg = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] = dg[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    add_into(&mut grads[gain.0], &dg);
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::GatherRows(x, idx) => {
                if self.wants(*x) {
                    let (_, cols) = rows_cols(&node.shape);
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut dx[src * cols..(src + 1) * cols];
                        dst.iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(a, &b)| *a = *a + b);
                    }
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.wants(*p) {
                        add_into(&mut grads[p.0], &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = rows_cols(&node.shape);
                let mut start = 0;
                for p in parts {
                    let w = rows_cols(self.shape(*p)).1;
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + start..r * total + start + w]);
                        }
                        add_into(&mut grads[p.0], &d);
                    }
                    start += w;
                }
            }
            Op::Dropout(x, mask) => {
                if self.wants(*x) {
                    let d: Vec<T> = g.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    add_into(&mut grads[x.0], &d);
                }
            }
            Op::MaskedSoftmax(x, allowed) => {
                if self.wants(*x) {
                    let (_, cols) = rows_cols(&node.shape);
                    let mut dx = vec![T::zero(); g.len()];
                    for ((dxr, (gr, pr)), ar) in dx
                        .chunks_mut(cols)
                        .zip(g.chunks(cols).zip(node.value.chunks(cols)))
                        .zip(allowed.chunks(cols))
                    {
                        softmax_row_backward(pr, gr, ar, dxr, T::one());
                    }
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::LogSoftmax(x) => {
                if self.wants(*x) {
                    let (_, cols) = rows_cols(&node.shape);
                    let mut dx = vec![T::zero(); g.len()];
                    for ((dxr, gr), yr) in dx
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(node.value.chunks(cols))
                    {
                        let gs: T = gr.iter().copied().sum();
                        for j in 0..cols {
                            dxr[j] = gr[j] - yr[j].exp() * gs;
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::CrossEntropy {
                log_probs,
                gold,
                smoothing,
            } => {
                if self.wants(*log_probs) {
                    let (rows, v) = rows_cols(self.shape(*log_probs));
                    let f = g[0] / T::of(rows as f64);
                    let uniform = *smoothing / T::of(v as f64);
                    let mut d = vec![-uniform * f; rows * v];
                    for (r, &gi) in gold.iter().enumerate() {
                        d[r * v + gi] = d[r * v + gi] - (T::one() - *smoothing) * f;
                    }
                    add_into(&mut grads[log_probs.0], &d);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
                prob_offsets,
            } => self.attention_backward(
                g,
                (*q, *k, *v),
                *heads,
                layout,
                probs,
                prob_offsets,
                grads,
            ),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[T],
        (q, k, v): (Var, Var, Var),
        heads: usize,
        layout: &AttnLayout,
        probs: &[T],
        prob_offsets: &[usize],
        grads: &mut [Option<Vec<T>>],
    ) {
        let d = rows_cols(self.shape(q)).1;
        let hd = d / heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let (qs, ks, vs) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![T::zero(); qs.len()];
        let mut dk = vec![T::zero(); ks.len()];
        let mut dv = vec![T::zero(); vs.len()];
        let max_k = layout.blocks.iter().map(|b| b.k_len).max().unwrap_or(0);
        let mut dp = vec![T::zero(); max_k];
        let mut ds = vec![T::zero(); max_k];
        let mut out_row = 0;
        for (bi, b) in layout.blocks.iter().enumerate() {
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for r in 0..b.q_len {
                    let allowed = &b.allowed[r * b.k_len..(r + 1) * b.k_len];
                    let p_off = prob_offsets[bi] + (h * b.q_len + r) * b.k_len;
                    let prow = &probs[p_off..p_off + b.k_len];
                    let grow = &g[(out_row + r) * d..][cols.clone()];
                    for c in 0..b.k_len {
                        if allowed[c] {
                            let vrow = &vs[(b.k_start + c) * d..][cols.clone()];
                            dp[c] = grow.iter().zip(vrow).map(|(&a, &bb)| a * bb).sum();
                            let dvrow = &mut dv[(b.k_start + c) * d..][cols.clone()];
                            let p = prow[c];
                            dvrow.iter_mut().zip(grow).for_each(|(a, &x)| *a = *a + p * x);
                        }
                    }
                    softmax_row_backward(
                        prow,
                        &dp[..b.k_len],
                        allowed,
                        &mut ds[..b.k_len],
                        scale,
                    );
                    let qi = (b.q_start + r) * d;
                    for c in 0..b.k_len {
                        if !allowed[c] {
                            continue;
                        }
                        let s = ds[c];
                        let kj = (b.k_start + c) * d;
                        for j in cols.clone() {
                            dq[qi + j] = dq[qi + j] + s * ks[kj + j];
                            dk[kj + j] = dk[kj + j] + s * qs[qi + j];
                        }
                    }
                }
            }
            out_row += b.q_len;
        }
        for (var, d) in [(q, dq), (k, dk), (v, dv)] {
            if self.wants(var) {
                add_into(&mut grads[var.0], &d);
            }
        }
    }
}

/// `dx = factor · p ⊙ (dp − Σ p·dp)` over allowed entries, zero elsewhere.
fn softmax_row_backward<T: Scalar>(p: &[T], dp: &[T], allowed: &[bool], dx: &mut [T], factor: T) {
    let mut dot = T::zero();
    for ((&pv, &dv), &ok) in p.iter().zip(dp).zip(allowed) {
        if ok {
            dot = dot + pv * dv;
        }
    }
    for (((o, &pv), &dv), &ok) in dx.iter_mut().zip(p).zip(dp).zip(allowed) {
        *o = if ok { factor * pv * (dv - dot) } else { T::zero() };
    }
}
