//! The decoder-only backbone and the Mixture-of-Chapters memory layer.
//!
//! Block order is self-attention, then (on memory layers) memory
//! cross-attention, then the SwiGLU MLP; each sub-layer is pre-normed with
//! RMSNorm and added back residually. One memory bank is shared by all
//! memory layers.

mod block;
pub mod config;
mod forward;
pub mod memory;
pub mod params;

use std::collections::HashMap;

use crate::error::{MocError, Result};
use crate::numerics::{Float, ParamGroup, ParamId, ParamStore, RngState, Tensor};

pub use config::{ModelConfig, INIT_STD, PRESETS};
pub use forward::{ForwardPass, ForwardTrace};
pub use memory::{aux_losses, MemoryBank, RouterDecision};
pub use params::{param_layout, Init, ParamCounts, ParamSpec};

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub attn_norm: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub mlp_norm: ParamId,
    pub w_up: ParamId,
    pub w_gate: ParamId,
    pub w_down: ParamId,
    pub memory: Option<MemoryLayerParams>,
}

#[derive(Clone, Debug)]
pub struct MemoryLayerParams {
    pub query_norm: ParamId,
    pub token_norm: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub router_w: ParamId,
    pub router_b: ParamId,
    pub adapter: Option<ParamId>,
}

/// A batch of `batch` token sequences of equal length, flattened row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub tokens: Vec<usize>,
    pub batch: usize,
    pub seq_len: usize,
}

impl TokenBatch {
    pub fn new(tokens: Vec<usize>, batch: usize, seq_len: usize) -> Result<Self> {
        if batch == 0 || seq_len == 0 || tokens.len() != batch * seq_len {
            return Err(MocError::dim(format!(
                "{} tokens do not form a {batch}×{seq_len} batch",
                tokens.len()
            )));
        }
        Ok(TokenBatch { tokens, batch, seq_len })
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let seq_len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != seq_len) {
            return Err(MocError::dim("sequences in a batch must share one length"));
        }
        Self::new(rows.concat(), rows.len(), seq_len)
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.tokens[b * self.seq_len..(b + 1) * self.seq_len]
    }
}

#[derive(Clone, Debug)]
pub struct Model<F> {
    cfg: ModelConfig,
    pub store: ParamStore<F>,
    pub embed: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_norm: ParamId,
    pub lm_head: Option<ParamId>,
    pub bank: Option<MemoryBank>,
}

impl<F: Float> Model<F> {
    /// Builds and initializes a model. Weights are N(0, 0.02²), norm gains 1,
    /// biases and the adapter 0, and the bank N(0, bank_init_std²). Each
    /// tensor draws from its own named substream of `rng`.
    pub fn build(cfg: &ModelConfig, rng: RngState) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        for spec in param_layout(cfg) {
            let value = match spec.init {
                Init::Normal(std) => Tensor::randn(&spec.shape, std, &mut rng.named(&spec.name).rng()),
                Init::Ones => Tensor::full(&spec.shape, F::one()),
                Init::Zeros => Tensor::zeros(&spec.shape),
            };
            store.add(spec.name, value, spec.group);
        }
        Self::from_store(cfg.clone(), store)
    }

    /// Wraps an existing parameter store, checking that it holds exactly the
    /// layout `cfg` implies.
    pub fn from_store(cfg: ModelConfig, store: ParamStore<F>) -> Result<Self> {
        cfg.validate()?;
        let layout = param_layout(&cfg);
        if layout.len() != store.len() {
            return Err(MocError::config(format!(
                "parameter store holds {} tensors, config implies {}",
                store.len(),
                layout.len()
            )));
        }
        let by_name: HashMap<&str, ParamId> = store.ids().map(|id| (store.get(id).name.as_str(), id)).collect();
        for spec in &layout {
            let id = by_name
                .get(spec.name.as_str())
                .ok_or_else(|| MocError::config(format!("missing parameter `{}`", spec.name)))?;
            let p = store.get(*id);
            if p.value.shape() != spec.shape.as_slice() || p.group != spec.group {
                return Err(MocError::config(format!(
                    "parameter `{}` has shape {:?} in group {:?}, expected {:?} in {:?}",
                    spec.name,
                    p.value.shape(),
                    p.group,
                    spec.shape,
                    spec.group
                )));
            }
        }
        let id = |name: String| by_name[name.as_str()];
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let p = |s: &str| id(format!("layers.{i}.{s}"));
                LayerParams {
                    attn_norm: p("attn_norm"),
                    wq: p("attn.wq"),
                    wk: p("attn.wk"),
                    wv: p("attn.wv"),
                    wo: p("attn.wo"),
                    mlp_norm: p("mlp_norm"),
                    w_up: p("mlp.w_up"),
                    w_gate: p("mlp.w_gate"),
                    w_down: p("mlp.w_down"),
                    memory: cfg.is_memory_layer(i).then(|| MemoryLayerParams {
                        query_norm: p("mem.query_norm"),
                        token_norm: p("mem.token_norm"),
                        wq: p("mem.wq"),
                        wk: p("mem.wk"),
                        wv: p("mem.wv"),
                        wo: p("mem.wo"),
                        router_w: p("mem.router_w"),
                        router_b: p("mem.router_b"),
                        adapter: cfg.adapter_enabled.then(|| p("mem.adapter")),
                    }),
                }
            })
            .collect();
        let bank = cfg.has_memory().then(|| MemoryBank {
            tokens: id("bank".into()),
            chapters: cfg.chapters,
            chapter_size: cfg.chapter_size,
            shared_chapters: cfg.shared_chapters,
        });
        Ok(Model {
            embed: id("embed".into()),
            final_norm: id("final_norm".into()),
            lm_head: (!cfg.tied_embeddings).then(|| id("lm_head".into())),
            layers,
            bank,
            store,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Exact parameter counts by group.
    pub fn param_count(&self) -> ParamCounts {
        ParamCounts::from_specs(self.store.iter().map(|p| (p.group, p.value.numel())))
    }

    /// The same model in another precision.
    pub fn cast<G: Float>(&self) -> Model<G> {
        Model::from_store(self.cfg.clone(), self.store.cast()).expect("layout unchanged by cast")
    }

    pub fn bank_tensor(&self) -> Option<&Tensor<F>> {
        self.bank.as_ref().map(|b| self.store.value(b.tokens))
    }

    pub fn params_in(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.store.ids().filter(move |&id| self.store.get(id).group == group)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_builds_with_expected_groups() {
        let m = Model::<f32>::build(&ModelConfig::micro(), RngState::new(0)).unwrap();
        let counts = m.param_count();
        assert_eq!(counts, ParamCounts::for_config(&ModelConfig::micro()));
        assert_eq!(counts.memory_bank, 136 * 64);
        assert_eq!(m.bank.as_ref().unwrap().chapter_rows(2), 16..24);
        let gain = m.store.value(m.final_norm);
        assert!(gain.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn build_is_deterministic() {
        let a = Model::<f32>::build(&ModelConfig::micro(), RngState::new(3)).unwrap();
        let b = Model::<f32>::build(&ModelConfig::micro(), RngState::new(3)).unwrap();
        for (x, y) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ModelConfig { top_k: 40, ..ModelConfig::micro() };
        assert!(matches!(Model::<f32>::build(&cfg, RngState::new(0)), Err(MocError::Config(_))));
    }

    #[test]
    fn untied_head_is_a_base_parameter() {
        let cfg = ModelConfig { tied_embeddings: false, ..ModelConfig::micro() };
        let m = Model::<f32>::build(&cfg, RngState::new(0)).unwrap();
        let head = m.store.get(m.lm_head.unwrap());
        assert_eq!(head.group, ParamGroup::Base);
        assert_eq!(head.value.shape(), &[64, 256]);
    }
}
