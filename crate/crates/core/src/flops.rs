//! Analytic FLOPs estimates for a forward pass over `B` sequences of length `L`.
//!
//! Counting conventions:
//! - linear layer over `N` rows: `2·N·d_in·d_out`
//! - attention score and value matmuls: `4·B·L_q·L_k·d`
//! - softmax with mask and scale: `h·B·L_q·L_k·(5 + 2)`
//! - RMSNorm over `N` rows: `N·(4d + 4)`
//! - backward pass: twice the forward pass
//!
//! Everything is integer arithmetic on `u128`.

use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::model::ModelConfig;

pub const SOFTMAX_FLOPS: u128 = 5;
pub const MASK_SCALE_FLOPS: u128 = 2;
pub const SWIGLU_ACT_FLOPS: u128 = 5;
pub const CE_FLOPS: u128 = 5;
pub const ROPE_FLOPS: u128 = 3;

/// Largest depth [`iso_depth_search`] will try before giving up.
pub const MAX_SEARCH_DEPTH: usize = 100_000;

fn linear(n: u128, d_in: u128, d_out: u128) -> u128 {
    2 * n * d_in * d_out
}

fn rmsnorm(n: u128, d: u128) -> u128 {
    n * (4 * d + 4)
}

fn ceil_log2(k: u128) -> u128 {
    if k <= 1 {
        0
    } else {
        (128 - (k - 1).leading_zeros()) as u128
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionFlops {
    pub q: u128,
    pub k: u128,
    pub v: u128,
    pub o: u128,
    pub matmuls: u128,
    pub softmax: u128,
    pub total: u128,
}

impl AttentionFlops {
    #[allow(clippy::too_many_arguments)]
    fn new(b: u128, lq: u128, lk: u128, d: u128, d_kv: u128, heads: u128) -> Self {
        let q = linear(b * lq, d, d);
        let k = linear(b * lk, d, d_kv);
        let v = linear(b * lk, d, d_kv);
        let o = linear(b * lq, d, d);
        let matmuls = 4 * b * lq * lk * d;
        let softmax = heads * b * lq * lk * (SOFTMAX_FLOPS + MASK_SCALE_FLOPS);
        AttentionFlops { q, k, v, o, matmuls, softmax, total: q + k + v + o + matmuls + softmax }
    }

    fn sum(&self) -> u128 {
        self.q + self.k + self.v + self.o + self.matmuls + self.softmax
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpFlops {
    pub up: u128,
    pub gate: u128,
    pub down: u128,
    pub activation: u128,
    pub total: u128,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandardLayerFlops {
    pub self_attention: AttentionFlops,
    pub rope: u128,
    pub norms: u128,
    pub mlp: MlpFlops,
    pub residuals: u128,
    pub total: u128,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterFlops {
    pub pool: u128,
    pub linear: u128,
    pub softmax: u128,
    pub topk: u128,
    pub total: u128,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemPreprocessFlops {
    pub weighting: u128,
    pub rmsnorm: u128,
    pub total: u128,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryExtraFlops {
    pub router: RouterFlops,
    pub router_aux: u128,
    pub mem_preprocess: MemPreprocessFlops,
    pub mem_attention: AttentionFlops,
    pub extra_norm: u128,
    pub extra_residual: u128,
    pub total: u128,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadFlops {
    pub norm: u128,
    pub lm_head: u128,
    pub ce: u128,
    pub total: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub batch: usize,
    pub seq_len: usize,
    pub standard_layers: usize,
    pub memory_layers: usize,
    pub standard_layer: StandardLayerFlops,
    pub memory_extra: Option<MemoryExtraFlops>,
    /// Standard layer plus memory extra.
    pub memory_layer_total: u128,
    pub head: HeadFlops,
    pub forward: u128,
    pub backward: u128,
    pub fwd_bwd: u128,
}

fn check_shape(b: usize, l: usize) -> Result<(u128, u128)> {
    if b == 0 || l == 0 {
        return Err(MocError::Range(format!("batch and seq_len must be >= 1, got B={b}, L={l}")));
    }
    Ok((b as u128, l as u128))
}

pub fn flops_standard_layer(cfg: &ModelConfig, batch: usize, seq_len: usize) -> Result<StandardLayerFlops> {
    let (b, l) = check_shape(batch, seq_len)?;
    let d = cfg.d_model as u128;
    let d_kv = cfg.d_kv() as u128;
    let f = cfg.d_ff as u128;
    let n = b * l;

    let self_attention = AttentionFlops::new(b, l, l, d, d_kv, cfg.n_heads as u128);
    let rope = ROPE_FLOPS * n * (d + d_kv);
    let norms = 2 * rmsnorm(n, d);
    let up = linear(n, d, f);
    let gate = linear(n, d, f);
    let down = linear(n, f, d);
    let activation = n * f * SWIGLU_ACT_FLOPS;
    let mlp = MlpFlops { up, gate, down, activation, total: up + gate + down + activation };
    let residuals = 2 * n * d;
    Ok(StandardLayerFlops {
        self_attention,
        rope,
        norms,
        mlp,
        residuals,
        total: self_attention.total + rope + norms + mlp.total + residuals,
    })
}

/// Placeholder estimate of the routing auxiliary losses: load balance,
/// z-loss and a router entropy term. Part of the count is per batch rather
/// than per sequence.
pub fn router_aux_estimate(cfg: &ModelConfig, batch: usize) -> u128 {
    let b = batch as u128;
    let c = cfg.chapters as u128;
    let cr = cfg.routed_chapters() as u128;
    // renormalize over routed chapters, selection counts, mean over batch, dot product
    let lb = 2 * b * cr + b * cr + cr + 2 * cr + 1;
    // logsumexp per sequence, square, mean
    let z = b * (SOFTMAX_FLOPS * c + 1) + b;
    let entropy = 3 * b * c;
    lb + z + entropy
}

pub fn flops_memory_layer_extra(
    cfg: &ModelConfig,
    batch: usize,
    seq_len: usize,
    aux_override: Option<u128>,
) -> Result<MemoryExtraFlops> {
    let (b, l) = check_shape(batch, seq_len)?;
    if !cfg.has_memory() {
        return Err(MocError::config("memory FLOPs requested for a config without memory layers"));
    }
    let d = cfg.d_model as u128;
    let c = cfg.chapters as u128;
    let n_sel = cfg.selected_tokens() as u128;

    let pool = b * d * (l - 1) + b * d;
    let router_linear = linear(b, d, c);
    let softmax = b * c * SOFTMAX_FLOPS;
    let topk = b * c * ceil_log2(cfg.top_k as u128);
    let router = RouterFlops {
        pool,
        linear: router_linear,
        softmax,
        topk,
        total: pool + router_linear + softmax + topk,
    };
    let router_aux = aux_override.unwrap_or_else(|| router_aux_estimate(cfg, batch));

    let weighting = b * n_sel * d;
    let norm = rmsnorm(b * n_sel, d);
    let mem_preprocess = MemPreprocessFlops { weighting, rmsnorm: norm, total: weighting + norm };

    let mem_attention = AttentionFlops::new(b, l, n_sel, d, cfg.mem_d_kv() as u128, cfg.mem_heads as u128);
    let extra_norm = rmsnorm(b * l, d);
    let extra_residual = b * l * d;
    let total = router.total + router_aux + mem_preprocess.total + mem_attention.total + extra_norm + extra_residual;
    Ok(MemoryExtraFlops { router, router_aux, mem_preprocess, mem_attention, extra_norm, extra_residual, total })
}

pub fn flops_head_and_loss(cfg: &ModelConfig, batch: usize, seq_len: usize) -> Result<HeadFlops> {
    let (b, l) = check_shape(batch, seq_len)?;
    let d = cfg.d_model as u128;
    let v = cfg.vocab as u128;
    let norm = rmsnorm(b * l, d);
    let lm_head = linear(b * l, d, v);
    let ce = b * (l - 1) * v * CE_FLOPS;
    Ok(HeadFlops { norm, lm_head, ce, total: norm + lm_head + ce })
}

pub fn flops_model(cfg: &ModelConfig, batch: usize, seq_len: usize, aux_override: Option<u128>) -> Result<FlopsReport> {
    let standard_layer = flops_standard_layer(cfg, batch, seq_len)?;
    let head = flops_head_and_loss(cfg, batch, seq_len)?;
    let memory_layers = if cfg.has_memory() { cfg.memory_layer_indices.len() } else { 0 };
    let standard_layers = cfg.n_layers - memory_layers;
    let memory_extra = if memory_layers > 0 {
        Some(flops_memory_layer_extra(cfg, batch, seq_len, aux_override)?)
    } else {
        None
    };
    let memory_layer_total = standard_layer.total + memory_extra.map_or(0, |m| m.total);
    let forward = standard_layers as u128 * standard_layer.total + memory_layers as u128 * memory_layer_total + head.total;
    Ok(FlopsReport {
        batch,
        seq_len,
        standard_layers,
        memory_layers,
        standard_layer,
        memory_extra,
        memory_layer_total,
        head,
        forward,
        backward: 2 * forward,
        fwd_bwd: 3 * forward,
    })
}

impl FlopsReport {
    /// Recomputes every total from its children.
    pub fn verify(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |name: &str, stated: u128, summed: u128| {
            if stated != summed {
                bad.push(format!("{name}: {stated} != {summed}"));
            }
        };
        let s = &self.standard_layer;
        check("standard_layer.self_attention", s.self_attention.total, s.self_attention.sum());
        check("standard_layer.mlp", s.mlp.total, s.mlp.up + s.mlp.gate + s.mlp.down + s.mlp.activation);
        check(
            "standard_layer",
            s.total,
            s.self_attention.total + s.rope + s.norms + s.mlp.total + s.residuals,
        );
        let mut extra_total = 0;
        if let Some(m) = &self.memory_extra {
            let r = &m.router;
            check("memory_extra.router", r.total, r.pool + r.linear + r.softmax + r.topk);
            check(
                "memory_extra.mem_preprocess",
                m.mem_preprocess.total,
                m.mem_preprocess.weighting + m.mem_preprocess.rmsnorm,
            );
            check("memory_extra.mem_attention", m.mem_attention.total, m.mem_attention.sum());
            check(
                "memory_extra",
                m.total,
                r.total + m.router_aux + m.mem_preprocess.total + m.mem_attention.total + m.extra_norm + m.extra_residual,
            );
            extra_total = m.total;
        }
        check("memory_layer_total", self.memory_layer_total, s.total + extra_total);
        check("head", self.head.total, self.head.norm + self.head.lm_head + self.head.ce);
        check(
            "forward",
            self.forward,
            self.standard_layers as u128 * s.total + self.memory_layers as u128 * self.memory_layer_total + self.head.total,
        );
        check("backward", self.backward, 2 * self.forward);
        check("fwd_bwd", self.fwd_bwd, self.forward + self.backward);
        if bad.is_empty() {
            Ok(())
        } else {
            Err(MocError::Range(format!("inconsistent FLOPs report: {}", bad.join("; "))))
        }
    }

    /// Flat `(component, value)` rows with dotted component names.
    pub fn line_items(&self) -> Vec<(String, u128)> {
        let mut rows = Vec::new();
        let mut push = |k: &str, v: u128| rows.push((k.to_string(), v));
        fn attention(push: &mut dyn FnMut(&str, u128), prefix: &str, a: &AttentionFlops) {
            for (k, v) in [
                ("q", a.q),
                ("k", a.k),
                ("v", a.v),
                ("o", a.o),
                ("matmuls", a.matmuls),
                ("softmax", a.softmax),
                ("total", a.total),
            ] {
                push(&format!("{prefix}.{k}"), v);
            }
        }
        let s = &self.standard_layer;
        attention(&mut push, "standard_layer.self_attention", &s.self_attention);
        push("standard_layer.rope", s.rope);
        push("standard_layer.norms", s.norms);
        push("standard_layer.mlp.up", s.mlp.up);
        push("standard_layer.mlp.gate", s.mlp.gate);
        push("standard_layer.mlp.down", s.mlp.down);
        push("standard_layer.mlp.activation", s.mlp.activation);
        push("standard_layer.mlp.total", s.mlp.total);
        push("standard_layer.residuals", s.residuals);
        push("standard_layer.total", s.total);
        if let Some(m) = &self.memory_extra {
            push("memory_extra.router.pool", m.router.pool);
            push("memory_extra.router.linear", m.router.linear);
            push("memory_extra.router.softmax", m.router.softmax);
            push("memory_extra.router.topk", m.router.topk);
            push("memory_extra.router.total", m.router.total);
            push("memory_extra.router_aux", m.router_aux);
            push("memory_extra.mem_preprocess.weighting", m.mem_preprocess.weighting);
            push("memory_extra.mem_preprocess.rmsnorm", m.mem_preprocess.rmsnorm);
            push("memory_extra.mem_preprocess.total", m.mem_preprocess.total);
            attention(&mut push, "memory_extra.mem_attention", &m.mem_attention);
            push("memory_extra.extra_norm", m.extra_norm);
            push("memory_extra.extra_residual", m.extra_residual);
            push("memory_extra.total", m.total);
            push("memory_layer_total", self.memory_layer_total);
        }
        push("head.norm", self.head.norm);
        push("head.lm_head", self.head.lm_head);
        push("head.ce", self.head.ce);
        push("head.total", self.head.total);
        push("standard_layers", self.standard_layers as u128);
        push("memory_layers", self.memory_layers as u128);
        push("forward", self.forward);
        push("backward", self.backward);
        push("fwd_bwd", self.fwd_bwd);
        rows
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component", "value"])?;
        for (k, v) in self.line_items() {
            w.write_record([k, v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSearch {
    pub target: u128,
    /// Smallest dense depth whose forward FLOPs reach the target.
    pub depth: usize,
    pub flops: u128,
    /// The depth just below, when `depth > 0`.
    pub below: Option<(usize, u128)>,
    /// `(flops - target) / target`.
    pub gap_above: f64,
    /// `(target - below) / target`.
    pub gap_below: Option<f64>,
}

/// Finds the shallowest dense model (memory removed from `template`) whose
/// forward cost is at least `target`.
pub fn iso_depth_search(target: u128, template: &ModelConfig, batch: usize, seq_len: usize) -> Result<DepthSearch> {
    let dense = template.without_memory();
    let head = flops_head_and_loss(&dense, batch, seq_len)?.total;
    if target < head {
        return Err(MocError::Range(format!("target {target} is below the head cost {head}")));
    }
    let layer = flops_standard_layer(&dense, batch, seq_len)?.total;
    let depth = (target - head).div_ceil(layer);
    if depth > MAX_SEARCH_DEPTH as u128 {
        return Err(MocError::Range(format!(
            "target {target} needs {depth} layers, more than the limit of {MAX_SEARCH_DEPTH}"
        )));
    }
    let depth = depth as usize;
    let at = |n: usize| -> Result<u128> {
        let cfg = ModelConfig { n_layers: n, ..dense.clone() };
        Ok(flops_model(&cfg, batch, seq_len, None)?.forward)
    };
    let flops = at(depth)?;
    let below = if depth > 0 { Some((depth - 1, at(depth - 1)?)) } else { None };
    let gap = |a: u128, b: u128| if target == 0 { 0.0 } else { (a - b) as f64 / target as f64 };
    Ok(DepthSearch {
        target,
        depth,
        flops,
        below,
        gap_above: gap(flops, target),
        gap_below: below.map(|(_, f)| gap(target, f)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(64), 6);
        assert_eq!(ceil_log2(65), 7);
    }

    #[test]
    fn zero_shapes_rejected() {
        let cfg = ModelConfig::micro();
        assert!(flops_standard_layer(&cfg, 0, 4).is_err());
        assert!(flops_head_and_loss(&cfg, 1, 0).is_err());
    }

    #[test]
    fn dense_config_has_no_memory_extra() {
        let cfg = ModelConfig::micro().without_memory();
        assert!(flops_memory_layer_extra(&cfg, 1, 8, None).is_err());
        let r = flops_model(&cfg, 1, 8, None).unwrap();
        assert!(r.memory_extra.is_none());
        r.verify().unwrap();
    }

    #[test]
    fn verify_catches_tampering() {
        let mut r = flops_model(&ModelConfig::micro(), 2, 16, None).unwrap();
        r.verify().unwrap();
        r.standard_layer.mlp.up += 1;
        assert!(r.verify().is_err());
    }
}
