//! Reverse-mode differentiation over an explicit tape.
//!
//! Each builder method evaluates one operation eagerly, records it with
//! whatever it needs for the backward pass, and returns the new node's id.
//! [`Tape::backward`] walks the tape in reverse applying each op's
//! handwritten adjoint. Only the ops this model needs exist.

use std::collections::HashMap;

use crate::error::{MocError, Result};
use crate::numerics::kernels::{self, AttnDims};
use crate::numerics::param::{ParamId, ParamStore};
use crate::numerics::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Per-sequence chapter list for [`Tape::chapter_row_weights`], in gather order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChapterPlan {
    /// Chapters that always get weight 1.
    pub shared: Vec<usize>,
    /// Routed chapters; their weights are renormalized router probabilities.
    pub routed: Vec<usize>,
}

enum Op<F> {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, F),
    RmsNorm { x: NodeId, gain: NodeId, inv_rms: Vec<F> },
    SiluMul { gate: NodeId, up: NodeId },
    Rope { x: NodeId, head_dim: usize, seq_len: usize, theta: f64 },
    Attention { q: NodeId, k: NodeId, v: NodeId, dims: AttnDims, probs: Vec<F> },
    GatherRows { src: NodeId, rows: Vec<usize> },
    SegmentMean { x: NodeId, segment_len: usize },
    SoftmaxRows(NodeId),
    LogSumExpRows(NodeId),
    ChapterRowWeights { probs: NodeId, plans: Vec<ChapterPlan>, chapter_size: usize, scaling: F },
    ScaleRows { x: NodeId, w: NodeId },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Vec<F> },
    Square(NodeId),
    Mean(NodeId),
    LoadBalance { probs: NodeId, freq: Vec<F>, n_shared: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Gradients for every node, indexed by [`NodeId`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, NodeId)>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    /// Adds parameter gradients into `store` (existing grads are kept, which
    /// is what gradient accumulation wants).
    pub fn accumulate_into(&self, store: &mut ParamStore<F>) {
        for &(pid, nid) in &self.params {
            if let Some(g) = &self.grads[nid.0] {
                let dst = store.get_mut(pid).grad.data_mut();
                for (d, &s) in dst.iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
    }
}

fn rows_cols<F: Float>(t: &Tensor<F>) -> (usize, usize) {
    (t.rows(), t.last_dim())
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Input)
    }

    /// Leaf for a parameter; repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Param);
        self.param_nodes.insert(id, n);
        n
    }

    /// `a[rows×k] · b[k×n]`; `a` may have any rank, viewed as rows of its last dim.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = rows_cols(self.value(a));
        let bv = self.value(b);
        if bv.rank() != 2 || bv.shape()[0] != k {
            return Err(MocError::dim(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.value(a).shape(),
                bv.shape()
            )));
        }
        let n = bv.shape()[1];
        let out = kernels::matmul_raw(self.value(a).data(), bv.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// `a[rows×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = rows_cols(self.value(a));
        let (n, k2) = rows_cols(self.value(b));
        if k != k2 {
            return Err(MocError::dim(format!(
                "matmul_nt inner dimensions differ: {:?} x {:?}ᵀ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(MocError::dim(format!("add shapes differ: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// `x[rows×n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = self.value(x).last_dim();
        if self.value(bias).numel() != n {
            return Err(MocError::dim(format!(
                "bias {:?} does not broadcast over {:?}",
                self.value(bias).shape(),
                self.value(x).shape()
            )));
        }
        let b = self.value(bias).data();
        let data = self.value(x).data().iter().enumerate().map(|(i, &v)| v + b[i % n]).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e * c).collect()).expect("same shape");
        self.push(t, Op::Scale(x, c))
    }

    pub fn rmsnorm(&mut self, x: NodeId, gain: NodeId, eps: F) -> Result<NodeId> {
        let (xv, gv) = (self.value(x), self.value(gain));
        if gv.numel() != xv.last_dim() {
            return Err(MocError::dim(format!("rmsnorm gain {:?} vs input {:?}", gv.shape(), xv.shape())));
        }
        let (y, inv_rms) = kernels::rmsnorm_forward(xv.data(), gv.data(), eps);
        let t = Tensor::new(xv.shape().to_vec(), y)?;
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }))
    }

    /// `silu(gate) ⊙ up`.
    pub fn silu_mul(&mut self, gate: NodeId, up: NodeId) -> Result<NodeId> {
        let (g, u) = (self.value(gate), self.value(up));
        if g.shape() != u.shape() {
            return Err(MocError::dim(format!("silu_mul shapes differ: {:?} vs {:?}", g.shape(), u.shape())));
        }
        let t = Tensor::new(g.shape().to_vec(), kernels::silu_mul_forward(g.data(), u.data()))?;
        Ok(self.push(t, Op::SiluMul { gate, up }))
    }

    /// RoPE on `x[(batch·seq_len) × (heads·head_dim)]`; row `r` sits at position `r % seq_len`.
    pub fn rope(&mut self, x: NodeId, head_dim: usize, seq_len: usize, theta: f64) -> Result<NodeId> {
        if head_dim % 2 != 0 {
            return Err(MocError::config(format!("rope needs an even head dimension, got {head_dim}")));
        }
        let xv = self.value(x);
        let heads = xv.last_dim() / head_dim;
        let mut t = xv.clone();
        kernels::rope_inplace(t.data_mut(), head_dim, theta, 1.0, |v| (v / heads) % seq_len);
        Ok(self.push(t, Op::Rope { x, head_dim, seq_len, theta }))
    }

    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, dims: AttnDims) -> Result<NodeId> {
        let q_width = dims.n_heads * dims.head_dim;
        let kv_width = dims.n_kv_heads * dims.head_dim;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let ok = qv.numel() == dims.batch * dims.lq * q_width
            && kv.numel() == dims.batch * dims.lk * kv_width
            && vv.numel() == kv.numel()
            && dims.n_kv_heads > 0
            && dims.n_heads % dims.n_kv_heads == 0
            && (!dims.causal || dims.lq == dims.lk);
        if !ok {
            return Err(MocError::dim(format!(
                "attention inputs q {:?} k {:?} v {:?} do not match {dims:?}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            )));
        }
        let (out, probs) = kernels::attention_forward(qv.data(), kv.data(), vv.data(), &dims);
        let t = Tensor::new(vec![dims.batch * dims.lq, q_width], out)?;
        Ok(self.push(t, Op::Attention { q, k, v, dims, probs }))
    }

    pub fn gather_rows(&mut self, src: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let sv = self.value(src);
        let (n_rows, width) = rows_cols(sv);
        if let Some(&r) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(MocError::Index(format!("row {r} outside [0, {n_rows})")));
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in &rows {
            data.extend_from_slice(sv.row(r));
        }
        let t = Tensor::new(vec![rows.len(), width], data)?;
        Ok(self.push(t, Op::GatherRows { src, rows }))
    }

    /// Mean over consecutive groups of `segment_len` rows: `[(b·len)×d] → [b×d]`.
    pub fn segment_mean(&mut self, x: NodeId, segment_len: usize) -> Result<NodeId> {
        let (rows, d) = rows_cols(self.value(x));
        if segment_len == 0 || rows % segment_len != 0 {
            return Err(MocError::dim(format!("{rows} rows do not split into segments of {segment_len}")));
        }
        let segments = rows / segment_len;
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); segments * d];
        for s in 0..segments {
            let acc = &mut out[s * d..(s + 1) * d];
            for r in 0..segment_len {
                for (a, &v) in acc.iter_mut().zip(&xv[(s * segment_len + r) * d..][..d]) {
                    *a += v;
                }
            }
            let n = F::of(segment_len as f64);
            acc.iter_mut().for_each(|a| *a = *a / n);
        }
        let t = Tensor::new(vec![segments, d], out)?;
        Ok(self.push(t, Op::SegmentMean { x, segment_len }))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let t = kernels::softmax_lastdim(self.value(x)).expect("non-empty rows");
        self.push(t, Op::SoftmaxRows(x))
    }

    pub fn logsumexp_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let out = kernels::logsumexp_rows(xv.data(), xv.last_dim());
        let n = out.len();
        self.push(Tensor::new(vec![n], out).expect("non-empty"), Op::LogSumExpRows(x))
    }

    /// Per-row weights for gathered memory tokens. `probs` is `[batch × C]`;
    /// sequence `b` gathers `plans[b].shared` then `plans[b].routed`, each
    /// chapter contributing `chapter_size` rows. Shared rows weigh 1, routed
    /// chapter `c` weighs `scaling · p_c / Σ_{c'∈routed} p_c'`.
    pub fn chapter_row_weights(
        &mut self,
        probs: NodeId,
        plans: Vec<ChapterPlan>,
        chapter_size: usize,
        scaling: F,
    ) -> Result<NodeId> {
        let pv = self.value(probs);
        let (batch, n_chapters) = rows_cols(pv);
        if plans.len() != batch {
            return Err(MocError::dim(format!("{} chapter plans for {batch} sequences", plans.len())));
        }
        let mut w = Vec::new();
        for (b, plan) in plans.iter().enumerate() {
            if plan.shared.iter().chain(&plan.routed).any(|&c| c >= n_chapters) {
                return Err(MocError::Index(format!("chapter outside [0, {n_chapters})")));
            }
            let row = pv.row(b);
            let z: F = plan.routed.iter().map(|&c| row[c]).sum();
            for _ in &plan.shared {
                w.extend(std::iter::repeat(F::one()).take(chapter_size));
            }
            for &c in &plan.routed {
                w.extend(std::iter::repeat(scaling * row[c] / z).take(chapter_size));
            }
        }
        let n = w.len();
        if n == 0 {
            return Err(MocError::config("chapter plan selects no memory tokens"));
        }
        let t = Tensor::new(vec![n], w)?;
        Ok(self.push(t, Op::ChapterRowWeights { probs, plans, chapter_size, scaling }))
    }

    /// `x[r,:] · w[r]`.
    pub fn scale_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (rows, d) = rows_cols(self.value(x));
        let wv = self.value(w).data();
        if wv.len() != rows {
            return Err(MocError::dim(format!("{} row weights for {rows} rows", wv.len())));
        }
        let data = self.value(x).data().iter().enumerate().map(|(i, &v)| v * wv[i / d]).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(t, Op::ScaleRows { x, w }))
    }

    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        let lv = self.value(logits);
        let v = lv.last_dim();
        if lv.rows() != targets.len() {
            return Err(MocError::dim(format!("logits {:?} for {} targets", lv.shape(), targets.len())));
        }
        let (loss, probs) = kernels::cross_entropy_forward(lv.data(), &targets, v)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, probs }))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e * e).collect()).expect("same shape");
        self.push(t, Op::Square(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s: F = v.data().iter().copied().sum();
        let m = s / F::of(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Switch-style balance loss over routed chapters `[n_shared, C)`:
    /// `C_r · Σ_c freq_c · mean_b(p_bc / Σ_routed p_b)`.
    pub fn load_balance(&mut self, probs: NodeId, freq: Vec<F>, n_shared: usize) -> Result<NodeId> {
        let pv = self.value(probs);
        let (batch, c) = rows_cols(pv);
        let c_r = c.checked_sub(n_shared).filter(|&n| n > 0 && n == freq.len()).ok_or_else(|| {
            MocError::dim(format!("{} frequencies for {c} chapters with {n_shared} shared", freq.len()))
        })?;
        let mut total = F::zero();
        for b in 0..batch {
            let row = &pv.row(b)[n_shared..];
            let z: F = row.iter().copied().sum();
            let mut acc = F::zero();
            for (&p, &f) in row.iter().zip(&freq) {
                acc += f * (p / z);
            }
            total += acc;
        }
        let loss = F::of(c_r as f64) * total / F::of(batch as f64);
        Ok(self.push(Tensor::scalar(loss), Op::LoadBalance { probs, freq, n_shared }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(MocError::dim(format!("backward needs a scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |target: NodeId, data: Vec<F>| accumulate(&mut grads, target, self.value(target), data);
            match &node.op {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (m, k) = rows_cols(self.value(*a));
                    let n = self.value(*b).shape()[1];
                    send(*a, kernels::matmul_nt(g.data(), self.value(*b).data(), m, n, k));
                    send(*b, kernels::matmul_tn(self.value(*a).data(), g.data(), m, k, n));
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = rows_cols(self.value(*a));
                    let n = self.value(*b).rows();
                    send(*a, kernels::matmul_raw(g.data(), self.value(*b).data(), m, n, k));
                    send(*b, kernels::matmul_tn(g.data(), self.value(*a).data(), m, n, k));
                }
                Op::Add(a, b) => {
                    send(*a, g.data().to_vec());
                    send(*b, g.data().to_vec());
                }
                Op::AddRow(x, bias) => {
                    let n = g.last_dim();
                    let mut db = vec![F::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    send(*x, g.data().to_vec());
                    send(*bias, db);
                }
                Op::Scale(x, c) => send(*x, g.data().iter().map(|&v| v * *c).collect()),
                Op::RmsNorm { x, gain, inv_rms } => {
                    let (dx, dg) =
                        kernels::rmsnorm_backward(self.value(*x).data(), self.value(*gain).data(), inv_rms, g.data());
                    send(*x, dx);
                    send(*gain, dg);
                }
                Op::SiluMul { gate, up } => {
                    let (dg, du) = kernels::silu_mul_backward(self.value(*gate).data(), self.value(*up).data(), g.data());
                    send(*gate, dg);
                    send(*up, du);
                }
                Op::Rope { x, head_dim, seq_len, theta } => {
                    let heads = g.last_dim() / head_dim;
                    let mut dx = g.data().to_vec();
                    kernels::rope_inplace(&mut dx, *head_dim, *theta, -1.0, |v| (v / heads) % seq_len);
                    send(*x, dx);
                }
                Op::Attention { q, k, v, dims, probs } => {
                    let (dq, dk, dv) = kernels::attention_backward(
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                        probs,
                        g.data(),
                        dims,
                    );
                    send(*q, dq);
                    send(*k, dk);
                    send(*v, dv);
                }
                Op::GatherRows { src, rows } => {
                    let sv = self.value(*src);
                    let width = sv.last_dim();
                    let mut ds = vec![F::zero(); sv.numel()];
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, &v) in ds[r * width..(r + 1) * width].iter_mut().zip(&g.data()[i * width..]) {
                            *d += v;
                        }
                    }
                    send(*src, ds);
                }
                Op::SegmentMean { x, segment_len } => {
                    let d = g.last_dim();
                    let n = F::of(*segment_len as f64);
                    let mut dx = Vec::with_capacity(self.value(*x).numel());
                    for row in g.data().chunks(d) {
                        for _ in 0..*segment_len {
                            dx.extend(row.iter().map(|&v| v / n));
                        }
                    }
                    send(*x, dx);
                }
                Op::SoftmaxRows(x) => {
                    send(*x, kernels::softmax_rows_backward(node.value.data(), g.data(), g.last_dim()));
                }
                Op::LogSumExpRows(x) => {
                    let xv = self.value(*x);
                    let mut p = xv.data().to_vec();
                    kernels::softmax_rows_inplace(&mut p, xv.last_dim());
                    let n = xv.last_dim();
                    for (r, row) in p.chunks_mut(n).enumerate() {
                        row.iter_mut().for_each(|v| *v *= g.data()[r]);
                    }
                    send(*x, p);
                }
                Op::ChapterRowWeights { probs, plans, chapter_size, scaling } => {
                    let pv = self.value(*probs);
                    let c = pv.last_dim();
                    let mut dp = vec![F::zero(); pv.numel()];
                    let mut offset = 0;
                    for (b, plan) in plans.iter().enumerate() {
                        offset += plan.shared.len() * chapter_size;
                        let row = pv.row(b);
                        let z: F = plan.routed.iter().map(|&ch| row[ch]).sum();
                        let mut chapter_grads = Vec::with_capacity(plan.routed.len());
                        for _ in &plan.routed {
                            let s: F = g.data()[offset..offset + chapter_size].iter().copied().sum();
                            chapter_grads.push(s);
                            offset += chapter_size;
                        }
                        let mut weighted = F::zero();
                        for (&ch, &gc) in plan.routed.iter().zip(&chapter_grads) {
                            weighted += gc * row[ch];
                        }
                        for (&ch, &gc) in plan.routed.iter().zip(&chapter_grads) {
                            dp[b * c + ch] += *scaling * (gc / z - weighted / (z * z));
                        }
                    }
                    send(*probs, dp);
                }
                Op::ScaleRows { x, w } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w).data();
                    let d = xv.last_dim();
                    let dx = g.data().iter().enumerate().map(|(i, &v)| v * wv[i / d]).collect();
                    let dw = g
                        .data()
                        .chunks(d)
                        .zip(xv.data().chunks(d))
                        .map(|(gr, xr)| {
                            let mut acc = F::zero();
                            for (&a, &b) in gr.iter().zip(xr) {
                                acc += a * b;
                            }
                            acc
                        })
                        .collect();
                    send(*x, dx);
                    send(*w, dw);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let v = self.value(*logits).last_dim();
                    send(*logits, kernels::cross_entropy_backward(probs, targets, v, g.item()));
                }
                Op::Square(x) => {
                    let dx = self.value(*x).data().iter().zip(g.data()).map(|(&v, &d)| F::of(2.0) * v * d).collect();
                    send(*x, dx);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    send(*x, vec![g.item() / F::of(n as f64); n]);
                }
                Op::LoadBalance { probs, freq, n_shared } => {
                    let pv = self.value(*probs);
                    let (batch, c) = rows_cols(pv);
                    let c_r = F::of((c - n_shared) as f64);
                    let scale = g.item() * c_r / F::of(batch as f64);
                    let mut dp = vec![F::zero(); pv.numel()];
                    for b in 0..batch {
                        let row = &pv.row(b)[*n_shared..];
                        let z: F = row.iter().copied().sum();
                        let mut fp = F::zero();
                        for (&p, &f) in row.iter().zip(freq) {
                            fp += f * p;
                        }
                        for (j, &f) in freq.iter().enumerate() {
                            dp[b * c + n_shared + j] = scale * (f / z - fp / (z * z));
                        }
                    }
                    send(*probs, dp);
                }
            }
            grads[idx] = Some(g);
        }

        let params = self.param_nodes.iter().map(|(&p, &n)| (p, n)).collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate<F: Float>(grads: &mut [Option<Tensor<F>>], target: NodeId, value: &Tensor<F>, data: Vec<F>) {
    match &mut grads[target.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(data) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(value.shape().to_vec(), data).expect("gradient matches value shape"));
        }
    }
}
