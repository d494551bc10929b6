//! Chapter routing and routed memory cross-attention.
//!
//! Per sequence: mean-pool the hidden states, score all `C` chapters with a
//! linear router and softmax, take the top-k among the routed (non-shared)
//! chapters, gather the shared plus selected chapters from the bank, and let
//! the sequence cross-attend to those tokens. Gathered tokens are RMS-normed
//! and then scaled per chapter: shared chapters by 1, routed chapter `c` by
//! `routed_scaling · p_c / Σ_{c'∈S} p_c'`. No causal mask and no positional
//! encoding apply on the memory side.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::model::{ModelConfig, Model};
use crate::numerics::{kernels, AttnDims, ChapterPlan, Float, NodeId, Tape, Tensor, RMSNORM_EPS};

/// The shared latent-token matrix and its chapter partition: chapter `c`
/// owns rows `[c·T, (c+1)·T)`, and chapters `[0, shared_chapters)` are always on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryBank {
    pub tokens: crate::numerics::ParamId,
    pub chapters: usize,
    pub chapter_size: usize,
    pub shared_chapters: usize,
}

impl MemoryBank {
    pub fn chapter_rows(&self, chapter: usize) -> Range<usize> {
        chapter * self.chapter_size..(chapter + 1) * self.chapter_size
    }

    pub fn is_shared(&self, chapter: usize) -> bool {
        chapter < self.shared_chapters
    }
}

/// One sequence's routing outcome at one memory layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouterDecision {
    /// Mean-pooled hidden state `r`.
    pub pooled: Vec<f64>,
    /// Router logits `W_r r + b_r` over all chapters.
    pub logits: Vec<f64>,
    /// `softmax(logits)` over all chapters.
    pub probs: Vec<f64>,
    /// Routed chapters in top-k order (descending probability, then index).
    pub selected: Vec<usize>,
    /// Shared chapters followed by the routed ones in ascending order; this is
    /// the gather order.
    pub selected_with_shared: Vec<usize>,
    /// Weight of each chapter in `selected_with_shared`.
    pub chapter_weights: Vec<f64>,
}

pub(crate) struct RouterNodes {
    pub logits: NodeId,
    pub probs: NodeId,
    pub plans: Vec<ChapterPlan>,
    pub decisions: Vec<RouterDecision>,
}

pub(crate) struct MemoryOut {
    pub readout: NodeId,
    pub router: RouterNodes,
}

fn values<F: Float>(xs: &[F]) -> Vec<f64> {
    xs.iter().map(|v| v.as_f64()).collect()
}

/// Top-k over routed chapters only, as absolute chapter indices.
pub fn select_routed<F: Float>(probs: &[F], cfg: &ModelConfig) -> Result<Vec<usize>> {
    let offset = cfg.shared_chapters;
    Ok(kernels::topk(&probs[offset..], cfg.top_k)?.into_iter().map(|i| i + offset).collect())
}

impl<F: Float> Model<F> {
    fn memory_params(&self, layer: usize) -> Result<&crate::model::MemoryLayerParams> {
        self.layers
            .get(layer)
            .and_then(|l| l.memory.as_ref())
            .ok_or_else(|| MocError::config(format!("layer {layer} is not a memory layer")))
    }

    fn bank_ref(&self) -> Result<&MemoryBank> {
        self.bank.as_ref().ok_or_else(|| MocError::config("model has no memory bank"))
    }

    fn check_selection(&self, chapters: &[usize]) -> Result<()> {
        let bank = self.bank_ref()?;
        let mut seen = chapters.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if chapters.is_empty() || seen.len() != chapters.len() {
            return Err(MocError::config(format!("routed selection {chapters:?} must be non-empty and distinct")));
        }
        if let Some(&c) = chapters.iter().find(|&&c| bank.is_shared(c) || c >= bank.chapters) {
            return Err(MocError::config(format!("chapter {c} is not a routed chapter")));
        }
        Ok(())
    }

    /// Router for one memory layer. `forced` replaces the top-k choice with
    /// explicit routed chapter lists (one per sequence).
    pub(crate) fn route_node(
        &self,
        tape: &mut Tape<F>,
        h: NodeId,
        layer: usize,
        seq_len: usize,
        forced: Option<&[Vec<usize>]>,
    ) -> Result<RouterNodes> {
        let cfg = self.config();
        let mp = self.memory_params(layer)?;
        let pooled = tape.segment_mean(h, seq_len)?;
        let (w, b) = (tape.param(&self.store, mp.router_w), tape.param(&self.store, mp.router_b));
        let scores = tape.matmul(pooled, w)?;
        let logits = tape.add_row(scores, b)?;
        let probs = tape.softmax_rows(logits);
        let batch = tape.value(pooled).rows();
        if let Some(f) = forced {
            if f.len() != batch {
                return Err(MocError::dim(format!("{} forced selections for {batch} sequences", f.len())));
            }
        }
        let shared: Vec<usize> = (0..cfg.shared_chapters).collect();
        let mut plans = Vec::with_capacity(batch);
        let mut decisions = Vec::with_capacity(batch);
        for s in 0..batch {
            let p = tape.value(probs).row(s);
            let selected = match forced {
                Some(f) => {
                    self.check_selection(&f[s])?;
                    f[s].clone()
                }
                None => select_routed(p, cfg)?,
            };
            let mut routed = selected.clone();
            routed.sort_unstable();
            let z: f64 = routed.iter().map(|&c| p[c].as_f64()).sum();
            let chapter_weights = shared
                .iter()
                .map(|_| 1.0)
                .chain(routed.iter().map(|&c| cfg.routed_scaling * p[c].as_f64() / z))
                .collect();
            decisions.push(RouterDecision {
                pooled: values(tape.value(pooled).row(s)),
                logits: values(tape.value(logits).row(s)),
                probs: values(p),
                selected,
                selected_with_shared: shared.iter().chain(&routed).copied().collect(),
                chapter_weights,
            });
            plans.push(ChapterPlan {
                shared: shared.clone(),
                routed,
            });
        }
        Ok(RouterNodes { logits, probs, plans, decisions })
    }

    /// Optional adapter, RMSNorm, then per-row weights on memory tokens.
    fn prepare_memory_node(
        &self,
        tape: &mut Tape<F>,
        layer: usize,
        tokens: NodeId,
        row_weights: Option<NodeId>,
    ) -> Result<NodeId> {
        let mp = self.memory_params(layer)?;
        let mut m = tokens;
        if let Some(adapter) = mp.adapter {
            let a = tape.param(&self.store, adapter);
            let delta = tape.matmul(m, a)?;
            m = tape.add(m, delta)?;
        }
        let gain = tape.param(&self.store, mp.token_norm);
        let normed = tape.rmsnorm(m, gain, F::of(RMSNORM_EPS))?;
        match row_weights {
            Some(w) => tape.scale_rows(normed, w),
            None => Ok(normed),
        }
    }

    /// Cross-attention readout from prepared memory tokens
    /// `[(batch·n_sel) × d]`, before the residual add.
    pub(crate) fn mem_read_node(
        &self,
        tape: &mut Tape<F>,
        h: NodeId,
        memory: NodeId,
        layer: usize,
        batch: usize,
        seq_len: usize,
    ) -> Result<NodeId> {
        let cfg = self.config();
        let mp = self.memory_params(layer)?;
        let n_mem = tape.value(memory).rows();
        if n_mem == 0 || n_mem % batch != 0 {
            return Err(MocError::config(format!("{n_mem} memory tokens for {batch} sequences")));
        }
        let s = &self.store;
        let gain = tape.param(s, mp.query_norm);
        let x = tape.rmsnorm(h, gain, F::of(RMSNORM_EPS))?;
        let (wq, wk, wv, wo) = (tape.param(s, mp.wq), tape.param(s, mp.wk), tape.param(s, mp.wv), tape.param(s, mp.wo));
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(memory, wk)?;
        let v = tape.matmul(memory, wv)?;
        let dims = AttnDims {
            batch,
            lq: seq_len,
            lk: n_mem / batch,
            n_heads: cfg.mem_heads,
            n_kv_heads: cfg.mem_kv_heads,
            head_dim: cfg.mem_head_dim(),
            causal: false,
        };
        let a = tape.attention(q, k, v, dims)?;
        tape.matmul(a, wo)
    }

    /// Route, gather, weight and read; returns the readout (no residual).
    pub(crate) fn memory_sublayer_node(
        &self,
        tape: &mut Tape<F>,
        h: NodeId,
        layer: usize,
        batch: usize,
        seq_len: usize,
        forced: Option<&[Vec<usize>]>,
    ) -> Result<MemoryOut> {
        let cfg = self.config();
        let bank = self.bank_ref()?.clone();
        let router = self.route_node(tape, h, layer, seq_len, forced)?;
        let rows: Vec<usize> = router
            .plans
            .iter()
            .flat_map(|p| p.shared.iter().chain(&p.routed).flat_map(|&c| bank.chapter_rows(c)))
            .collect();
        let bank_node = tape.param(&self.store, bank.tokens);
        let selected = tape.gather_rows(bank_node, rows)?;
        let weights = tape.chapter_row_weights(
            router.probs,
            router.plans.clone(),
            cfg.chapter_size,
            F::of(cfg.routed_scaling),
        )?;
        let memory = self.prepare_memory_node(tape, layer, selected, Some(weights))?;
        let readout = self.mem_read_node(tape, h, memory, layer, batch, seq_len)?;
        Ok(MemoryOut { readout, router })
    }

    /// Routing decisions of memory layer `layer` for hidden states holding `batch` sequences.
    pub fn route(&self, h: &Tensor<F>, layer: usize, batch: usize) -> Result<Vec<RouterDecision>> {
        let mut tape = Tape::new();
        let (x, seq_len) = self.hidden_input(&mut tape, h, batch)?;
        Ok(self.route_node(&mut tape, x, layer, seq_len, None)?.decisions)
    }

    /// Memory readout for one sequence `h: [L × d]` attending to the given
    /// memory tokens `[N_sel × d]`, optionally scaled per row. The caller adds
    /// the residual.
    pub fn mem_read(&self, h: &Tensor<F>, tokens: &Tensor<F>, row_weights: Option<&[F]>, layer: usize) -> Result<Tensor<F>> {
        if tokens.rank() != 2 || tokens.last_dim() != self.config().d_model {
            return Err(MocError::dim(format!("memory tokens {:?} must be [N_sel × d]", tokens.shape())));
        }
        let mut tape = Tape::new();
        let (x, seq_len) = self.hidden_input(&mut tape, h, 1)?;
        let m = tape.input(tokens.clone());
        let w = match row_weights {
            Some(w) => Some(tape.input(Tensor::new(vec![w.len()], w.to_vec())?)),
            None => None,
        };
        let prepared = self.prepare_memory_node(&mut tape, layer, m, w)?;
        let out = self.mem_read_node(&mut tape, x, prepared, layer, 1, seq_len)?;
        Ok(tape.value(out).clone())
    }

    /// `H' = H + MemRead(H, M_S)` with sequence-level routing.
    pub fn memory_layer_forward(&self, h: &Tensor<F>, layer: usize, batch: usize) -> Result<(Tensor<F>, Vec<RouterDecision>)> {
        self.memory_layer_forward_inner(h, layer, batch, None)
    }

    /// As [`Model::memory_layer_forward`] but with explicit routed chapters per
    /// sequence instead of the top-k choice. Router probabilities still set the weights.
    pub fn memory_layer_forward_with_selection(
        &self,
        h: &Tensor<F>,
        layer: usize,
        batch: usize,
        selection: &[Vec<usize>],
    ) -> Result<(Tensor<F>, Vec<RouterDecision>)> {
        self.memory_layer_forward_inner(h, layer, batch, Some(selection))
    }

    fn memory_layer_forward_inner(
        &self,
        h: &Tensor<F>,
        layer: usize,
        batch: usize,
        forced: Option<&[Vec<usize>]>,
    ) -> Result<(Tensor<F>, Vec<RouterDecision>)> {
        let mut tape = Tape::new();
        let (x, seq_len) = self.hidden_input(&mut tape, h, batch)?;
        let out = self.memory_sublayer_node(&mut tape, x, layer, batch, seq_len, forced)?;
        let y = tape.add(x, out.readout)?;
        Ok((tape.value(y).clone(), out.router.decisions))
    }
}

/// Per-routed-chapter selection frequency: the share of all routing
/// assignments that went to each chapter, so the entries sum to 1.
pub fn selection_frequencies(decisions: &[RouterDecision], cfg: &ModelConfig) -> Vec<f64> {
    let mut counts = vec![0usize; cfg.routed_chapters()];
    for d in decisions {
        for &c in &d.selected {
            counts[c - cfg.shared_chapters] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts.iter().map(|&n| n as f64 / total.max(1) as f64).collect()
}

/// `(lb_loss, z_loss)` from routing decisions grouped by memory layer.
///
/// Per layer, `lb = C_r · Σ_c f_c · P_c` over routed chapters, with `f_c` from
/// [`selection_frequencies`] and `P_c` the batch mean of `p_c` renormalized
/// over routed chapters; layers are averaged. `z` is the mean over all layers
/// and sequences of `(log Σ_c exp(logit_c))²`. No layers gives `(0, 0)`.
pub fn aux_losses(layers: &[Vec<RouterDecision>], cfg: &ModelConfig) -> (f64, f64) {
    let layers: Vec<_> = layers.iter().filter(|l| !l.is_empty()).collect();
    if layers.is_empty() {
        return (0.0, 0.0);
    }
    let c_r = cfg.routed_chapters();
    let shared = cfg.shared_chapters;
    let (mut lb, mut z, mut n_z) = (0.0, 0.0, 0usize);
    for decisions in &layers {
        let freq = selection_frequencies(decisions, cfg);
        let mut mean_p = vec![0.0; c_r];
        for d in decisions.iter() {
            let routed = &d.probs[shared..];
            let total: f64 = routed.iter().sum();
            for (m, p) in mean_p.iter_mut().zip(routed) {
                *m += p / total / decisions.len() as f64;
            }
            let lse = kernels::logsumexp_rows(&d.logits, d.logits.len())[0];
            z += lse * lse;
            n_z += 1;
        }
        lb += c_r as f64 * freq.iter().zip(&mean_p).map(|(f, p)| f * p).sum::<f64>();
    }
    (lb / layers.len() as f64, z / n_z as f64)
}
