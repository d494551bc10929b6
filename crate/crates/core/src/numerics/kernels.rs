//! Forward and backward kernels on flat row-major buffers.
//!
//! Accumulation order is fixed: every dot product is summed sequentially over
//! its reduction index starting from zero, with no reassociation. Results are
//! therefore bit-identical to a naive loop that accumulates in the same order.

use crate::error::{MocError, Result};
use crate::numerics::tensor::{Float, Tensor};

/// Default epsilon for RMSNorm.
pub const RMSNORM_EPS: f64 = 1e-6;

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul_raw<F: Float>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt<F: Float>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// `c[m×n] = a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn<F: Float>(a: &[F], b: &[F], k: usize, m: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_pi * b_pj;
            }
        }
    }
    c
}

pub fn transpose_raw<F: Float>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut t = vec![F::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn as_matrix<F: Float>(t: &Tensor<F>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(MocError::dim(format!("{what} must be 2-D, got shape {s:?}"))),
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = as_matrix(a, "matmul lhs")?;
    let (k2, n) = as_matrix(b, "matmul rhs")?;
    if k != k2 {
        return Err(MocError::dim(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

/// Gradients of `c = a·b` given `dc`: `(dc·bᵀ, aᵀ·dc)`.
pub fn matmul_backward<F: Float>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    dc: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (m, k) = as_matrix(a, "matmul lhs")?;
    let (_, n) = as_matrix(b, "matmul rhs")?;
    let da = matmul_nt(dc.data(), b.data(), m, n, k);
    let db = matmul_tn(a.data(), dc.data(), m, k, n);
    Ok((Tensor::new(vec![m, k], da)?, Tensor::new(vec![k, n], db)?))
}

/// Numerically stable softmax of each length-`n` row, in place.
pub fn softmax_rows_inplace<F: Float>(x: &mut [F], n: usize) {
    for row in x.chunks_mut(n) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// `dx = y ⊙ (dy − Σ y·dy)` per row.
pub fn softmax_rows_backward<F: Float>(y: &[F], dy: &[F], n: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); y.len()];
    for ((yr, dyr), dxr) in y.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n)) {
        let mut dot = F::zero();
        for (&a, &b) in yr.iter().zip(dyr) {
            dot += a * b;
        }
        for ((d, &a), &b) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = a * (b - dot);
        }
    }
    dx
}

pub fn softmax_lastdim<F: Float>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let n = x.last_dim();
    if n == 0 {
        return Err(MocError::dim("softmax over an empty last dimension"));
    }
    let mut out = x.clone();
    softmax_rows_inplace(out.data_mut(), n);
    Ok(out)
}

/// `log Σ exp(row)` for each length-`n` row.
pub fn logsumexp_rows<F: Float>(x: &[F], n: usize) -> Vec<F> {
    x.chunks(n)
        .map(|row| {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for &v in row {
                sum += (v - max).exp();
            }
            max + sum.ln()
        })
        .collect()
}

/// Returns `(y, inv_rms)` where `y = gain ⊙ x / sqrt(mean(x²) + eps)` row-wise.
pub fn rmsnorm_forward<F: Float>(x: &[F], gain: &[F], eps: F) -> (Vec<F>, Vec<F>) {
    let d = gain.len();
    let d_f = F::of(d as f64);
    let mut y = vec![F::zero(); x.len()];
    let mut inv = Vec::with_capacity(x.len() / d);
    for (xr, yr) in x.chunks(d).zip(y.chunks_mut(d)) {
        let mut ss = F::zero();
        for &v in xr {
            ss += v * v;
        }
        let r = F::one() / (ss / d_f + eps).sqrt();
        for ((o, &v), &g) in yr.iter_mut().zip(xr).zip(gain) {
            *o = g * (v * r);
        }
        inv.push(r);
    }
    (y, inv)
}

/// Returns `(dx, dgain)`.
pub fn rmsnorm_backward<F: Float>(x: &[F], gain: &[F], inv_rms: &[F], dy: &[F]) -> (Vec<F>, Vec<F>) {
    let d = gain.len();
    let d_f = F::of(d as f64);
    let mut dx = vec![F::zero(); x.len()];
    let mut dg = vec![F::zero(); d];
    for (((xr, dyr), dxr), &r) in x.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)).zip(inv_rms) {
        let mut dot = F::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xr[j] * r;
            dot += dyr[j] * gain[j] * xr[j];
        }
        let coef = r * r * r * dot / d_f;
        for j in 0..d {
            dxr[j] = r * gain[j] * dyr[j] - coef * xr[j];
        }
    }
    (dx, dg)
}

pub fn rmsnorm<F: Float>(x: &Tensor<F>, gain: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
    if gain.rank() != 1 || gain.numel() != x.last_dim() {
        return Err(MocError::dim(format!(
            "rmsnorm gain {:?} does not match input {:?}",
            gain.shape(),
            x.shape()
        )));
    }
    let (y, _) = rmsnorm_forward(x.data(), gain.data(), eps);
    Tensor::new(x.shape().to_vec(), y)
}

pub fn sigmoid<F: Float>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

pub fn silu<F: Float>(z: F) -> F {
    z * sigmoid(z)
}

/// `silu(gate) ⊙ up`.
pub fn silu_mul_forward<F: Float>(gate: &[F], up: &[F]) -> Vec<F> {
    gate.iter().zip(up).map(|(&g, &u)| silu(g) * u).collect()
}

/// Returns `(dgate, dup)`.
pub fn silu_mul_backward<F: Float>(gate: &[F], up: &[F], dout: &[F]) -> (Vec<F>, Vec<F>) {
    let mut dg = Vec::with_capacity(gate.len());
    let mut du = Vec::with_capacity(gate.len());
    for ((&g, &u), &d) in gate.iter().zip(up).zip(dout) {
        let s = sigmoid(g);
        du.push(d * g * s);
        dg.push(d * u * s * (F::one() + g * (F::one() - s)));
    }
    (dg, du)
}

/// SwiGLU MLP: `down(silu(x·w_gate) ⊙ (x·w_up))` on rows of `x`.
pub fn swiglu<F: Float>(
    x: &Tensor<F>,
    w_up: &Tensor<F>,
    w_gate: &Tensor<F>,
    w_down: &Tensor<F>,
) -> Result<Tensor<F>> {
    let d = x.last_dim();
    let (du, f) = as_matrix(w_up, "w_up")?;
    if du != d || w_gate.shape() != w_up.shape() || w_down.shape() != [f, d] {
        return Err(MocError::dim(format!(
            "swiglu weights up {:?} gate {:?} down {:?} do not fit input {:?}",
            w_up.shape(),
            w_gate.shape(),
            w_down.shape(),
            x.shape()
        )));
    }
    let rows = x.rows();
    let up = matmul_raw(x.data(), w_up.data(), rows, d, f);
    let gate = matmul_raw(x.data(), w_gate.data(), rows, d, f);
    let h = silu_mul_forward(&gate, &up);
    Tensor::new(x.shape().to_vec(), matmul_raw(&h, w_down.data(), rows, f, d))
}

/// Rotate adjacent pairs `(2i, 2i+1)` of each `head_dim` vector by
/// `sign · pos · theta^(−2i/head_dim)`. `x` holds `n_vectors` vectors back to
/// back; `pos_of(v)` gives the position of vector `v`.
pub fn rope_inplace<F: Float>(
    x: &mut [F],
    head_dim: usize,
    theta: f64,
    sign: f64,
    pos_of: impl Fn(usize) -> usize,
) {
    let half = head_dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| theta.powf(-(2.0 * i as f64) / head_dim as f64))
        .collect();
    for (v, chunk) in x.chunks_mut(head_dim).enumerate() {
        let pos = pos_of(v) as f64;
        if pos == 0.0 {
            continue;
        }
        for (i, &freq) in freqs.iter().enumerate() {
            let angle = sign * pos * freq;
            let (s, c) = (F::of(angle.sin()), F::of(angle.cos()));
            let a = chunk[2 * i];
            let b = chunk[2 * i + 1];
            chunk[2 * i] = a * c - b * s;
            chunk[2 * i + 1] = a * s + b * c;
        }
    }
}

/// RoPE for `q: [heads×L×d_h]` and `k: [kv_heads×L×d_h]`; position is the `L` index.
pub fn rope_apply<F: Float>(q: &Tensor<F>, k: &Tensor<F>, theta: f64) -> Result<(Tensor<F>, Tensor<F>)> {
    let (q_shape, k_shape) = (q.shape(), k.shape());
    if q.rank() != 3 || k.rank() != 3 || q_shape[1] != k_shape[1] || q_shape[2] != k_shape[2] {
        return Err(MocError::dim(format!(
            "rope expects [heads×L×d_h] inputs with matching L and d_h, got {q_shape:?} and {k_shape:?}"
        )));
    }
    let (len, head_dim) = (q_shape[1], q_shape[2]);
    if head_dim % 2 != 0 {
        return Err(MocError::config(format!("rope needs an even head dimension, got {head_dim}")));
    }
    let mut q_out = q.clone();
    let mut k_out = k.clone();
    rope_inplace(q_out.data_mut(), head_dim, theta, 1.0, |v| v % len);
    rope_inplace(k_out.data_mut(), head_dim, theta, 1.0, |v| v % len);
    Ok((q_out, k_out))
}

/// Mean negative log-likelihood of `targets` under row-softmax of `logits [n×v]`.
/// Returns `(loss, probs)`; `probs` is reused by the backward pass.
pub fn cross_entropy_forward<F: Float>(logits: &[F], targets: &[usize], v: usize) -> Result<(F, Vec<F>)> {
    let n = targets.len();
    if n == 0 || logits.len() != n * v {
        return Err(MocError::dim(format!(
            "cross entropy: {} logits for {n} targets of vocab {v}",
            logits.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= v) {
        return Err(MocError::Index(format!("target {t} outside vocabulary of {v}")));
    }
    let lse = logsumexp_rows(logits, v);
    let mut total = F::zero();
    for (i, &t) in targets.iter().enumerate() {
        total += lse[i] - logits[i * v + t];
    }
    let mut probs = logits.to_vec();
    for (row, &l) in probs.chunks_mut(v).zip(&lse) {
        for p in row.iter_mut() {
            *p = (*p - l).exp();
        }
    }
    Ok((total / F::of(n as f64), probs))
}

/// `d logits = dloss · (probs − onehot) / n`.
pub fn cross_entropy_backward<F: Float>(probs: &[F], targets: &[usize], v: usize, dloss: F) -> Vec<F> {
    let scale = dloss / F::of(targets.len() as f64);
    let mut g: Vec<F> = probs.iter().map(|&p| p * scale).collect();
    for (i, &t) in targets.iter().enumerate() {
        g[i * v + t] -= scale;
    }
    g
}

pub fn cross_entropy<F: Float>(logits: &Tensor<F>, targets: &[usize]) -> Result<F> {
    let v = logits.last_dim();
    if logits.rows() != targets.len() {
        return Err(MocError::dim(format!(
            "cross entropy: logits {:?} for {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    cross_entropy_forward(logits.data(), targets, v).map(|(l, _)| l)
}

/// Indices of the `k` largest entries, ordered by descending value then
/// ascending index.
pub fn topk<F: Float>(p: &[F], k: usize) -> Result<Vec<usize>> {
    if k > p.len() {
        return Err(MocError::config(format!("top-k with k={k} over {} entries", p.len())));
    }
    if let Some(i) = p.iter().position(|v| v.is_nan()) {
        return Err(MocError::numeric("topk", format!("NaN score at index {i}")));
    }
    // Bounded insertion: `best` stays sorted; scanning in index order means an
    // equal value never displaces an earlier index.
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    for (i, &v) in p.iter().enumerate() {
        if best.len() == k && (k == 0 || v <= p[best[k - 1]]) {
            continue;
        }
        let at = best.iter().position(|&j| v > p[j]).unwrap_or(best.len());
        best.insert(at, i);
        best.truncate(k);
    }
    Ok(best)
}

/// Dimensions for fused multi-head attention over `batch` independent groups.
/// Queries are `[batch·lq × n_heads·head_dim]`, keys and values
/// `[batch·lk × n_kv_heads·head_dim]`; query head `h` reads KV head
/// `h / (n_heads / n_kv_heads)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnDims {
    pub batch: usize,
    pub lq: usize,
    pub lk: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub causal: bool,
}

impl AttnDims {
    fn q_width(&self) -> usize {
        self.n_heads * self.head_dim
    }
    fn kv_width(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }
    fn group(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }
    fn visible(&self, i: usize) -> usize {
        if self.causal {
            i + 1
        } else {
            self.lk
        }
    }
}

/// Returns `(out, probs)`; `probs` is `[batch × n_heads × lq × lk]` with masked entries zero.
pub fn attention_forward<F: Float>(q: &[F], k: &[F], v: &[F], dims: &AttnDims) -> (Vec<F>, Vec<F>) {
    let AttnDims { batch, lq, lk, n_heads, head_dim, .. } = *dims;
    let (qw, kw) = (dims.q_width(), dims.kv_width());
    let scale = F::one() / F::of(head_dim as f64).sqrt();
    let mut out = vec![F::zero(); batch * lq * qw];
    let mut probs = vec![F::zero(); batch * n_heads * lq * lk];
    for b in 0..batch {
        for h in 0..n_heads {
            let kvh = h / dims.group();
            for i in 0..lq {
                let q_vec = &q[(b * lq + i) * qw + h * head_dim..][..head_dim];
                let visible = dims.visible(i);
                let p_row = &mut probs[((b * n_heads + h) * lq + i) * lk..][..lk];
                for (j, p) in p_row.iter_mut().enumerate().take(visible) {
                    let k_vec = &k[(b * lk + j) * kw + kvh * head_dim..][..head_dim];
                    let mut acc = F::zero();
                    for (&x, &y) in q_vec.iter().zip(k_vec) {
                        acc += x * y;
                    }
                    *p = acc * scale;
                }
                softmax_rows_inplace(&mut p_row[..visible], visible);
                let o_vec = &mut out[(b * lq + i) * qw + h * head_dim..][..head_dim];
                for (j, &p) in p_row.iter().enumerate().take(visible) {
                    let v_vec = &v[(b * lk + j) * kw + kvh * head_dim..][..head_dim];
                    for (o, &x) in o_vec.iter_mut().zip(v_vec) {
                        *o += p * x;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward<F: Float>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    dims: &AttnDims,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let AttnDims { batch, lq, lk, n_heads, head_dim, .. } = *dims;
    let (qw, kw) = (dims.q_width(), dims.kv_width());
    let scale = F::one() / F::of(head_dim as f64).sqrt();
    let mut dq = vec![F::zero(); q.len()];
    let mut dk = vec![F::zero(); k.len()];
    let mut dv = vec![F::zero(); v.len()];
    let mut ds = vec![F::zero(); lk];
    for b in 0..batch {
        for h in 0..n_heads {
            let kvh = h / dims.group();
            for i in 0..lq {
                let visible = dims.visible(i);
                let p_row = &probs[((b * n_heads + h) * lq + i) * lk..][..lk];
                let q_off = (b * lq + i) * qw + h * head_dim;
                let do_vec = &dout[q_off..q_off + head_dim];
                let mut dot = F::zero();
                for j in 0..visible {
                    let kv_off = (b * lk + j) * kw + kvh * head_dim;
                    let v_vec = &v[kv_off..kv_off + head_dim];
                    let mut dp = F::zero();
                    for (&g, &x) in do_vec.iter().zip(v_vec) {
                        dp += g * x;
                    }
                    ds[j] = dp;
                    dot += p_row[j] * dp;
                    for (d, &g) in dv[kv_off..kv_off + head_dim].iter_mut().zip(do_vec) {
                        *d += p_row[j] * g;
                    }
                }
                for j in 0..visible {
                    let s = p_row[j] * (ds[j] - dot) * scale;
                    let kv_off = (b * lk + j) * kw + kvh * head_dim;
                    for d in 0..head_dim {
                        dq[q_off + d] += s * k[kv_off + d];
                        dk[kv_off + d] += s * q[q_off + d];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let proj = t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&proj, &b).unwrap().data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_lastdim(&t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        for &v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_lastdim(&t(&[2], &[1000.0, 0.0])).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1].abs() < 1e-12);
        let l = softmax_lastdim(&t(&[3], &[1f64.ln(), 2f64.ln(), 3f64.ln()])).unwrap();
        for (v, e) in l.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rmsnorm_examples() {
        let ones = Tensor::<f64>::full(&[5], 1.0);
        let y = rmsnorm(&ones, &ones, 1e-300).unwrap();
        assert!(y.max_abs_diff(&ones) < 1e-15);
        let y = rmsnorm(&t(&[2], &[3.0, -3.0]), &t(&[2], &[1.0, 1.0]), 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
        assert!(rmsnorm(&ones, &Tensor::full(&[4], 1.0), 0.0).is_err());
    }

    #[test]
    fn swiglu_zero_input_and_saturation() {
        let d = 3;
        let x0 = Tensor::<f64>::zeros(&[2, d]);
        let w = Tensor::<f64>::full(&[d, 4], 0.3);
        let wd = Tensor::<f64>::full(&[4, d], 0.2);
        assert_eq!(swiglu(&x0, &w, &w, &wd).unwrap(), x0);

        // Gate pre-activation is a constant 100, where silu(z) = z·σ(z) ≈ z, so the
        // output reduces to 100·down(up(x)).
        let x = t(&[1, 2], &[0.5, -0.25]);
        let up = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let gate = t(&[2, 2], &[200.0, 200.0, 0.0, 0.0]);
        let down = t(&[2, 2], &[2.0, 1.0, -1.0, 3.0]);
        let y = swiglu(&x, &up, &gate, &down).unwrap();
        let expect = matmul(&matmul(&x, &up).unwrap(), &down).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - 100.0 * b).abs() < 1e-6 * (100.0 * b).abs().max(1.0));
        }
    }

    #[test]
    fn rope_identity_at_zero_and_isometry() {
        let q = t(&[1, 3, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, -1.0, 0.5, 2.0, -3.0]);
        let (rq, _) = rope_apply(&q, &q, 10.0).unwrap();
        assert_eq!(&rq.data()[..4], &q.data()[..4]);
        for pair in 0..6 {
            let (a, b) = (q.data()[2 * pair], q.data()[2 * pair + 1]);
            let (c, d) = (rq.data()[2 * pair], rq.data()[2 * pair + 1]);
            assert!(((a * a + b * b).sqrt() - (c * c + d * d).sqrt()).abs() < 1e-9);
        }
        let odd = Tensor::<f64>::zeros(&[1, 2, 3]);
        assert!(matches!(rope_apply(&odd, &odd, 10.0), Err(MocError::Config(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let u = t(&[1, 4], &[0.0; 4]);
        assert!((cross_entropy(&u, &[2]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let c = t(&[1, 3], &[1000.0, 0.0, 0.0]);
        assert!(cross_entropy(&c, &[0]).unwrap().abs() < 1e-12);
        assert!(matches!(cross_entropy(&u, &[4]), Err(MocError::Index(_))));
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk(&[0.1, 0.5, 0.4], 2).unwrap(), vec![1, 2]);
        assert_eq!(topk(&[0.3, 0.3, 0.3], 2).unwrap(), vec![0, 1]);
        assert_eq!(topk(&[0.3, 0.3, 0.3], 0).unwrap(), Vec::<usize>::new());
        assert!(matches!(topk(&[0.3], 2), Err(MocError::Config(_))));
    }

    #[test]
    fn causal_attention_single_position() {
        let dims = AttnDims { batch: 1, lq: 1, lk: 1, n_heads: 1, n_kv_heads: 1, head_dim: 2, causal: true };
        let (out, probs) = attention_forward(&[1.0f64, 2.0], &[3.0, 4.0], &[5.0, 6.0], &dims);
        assert_eq!(probs, vec![1.0]);
        assert_eq!(out, vec![5.0, 6.0]);
    }
}
