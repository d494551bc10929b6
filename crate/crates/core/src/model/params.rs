use serde::Serialize;

use crate::model::config::{ModelConfig, INIT_STD};
use crate::numerics::ParamGroup;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: &[usize], group: ParamGroup, init: Init) -> Self {
        ParamSpec {
            name,
            shape: shape.to_vec(),
            group,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Every trainable tensor of a model described by `cfg`, in registration
/// order. Weights are stored `[d_in × d_out]` so a projection is `x · W`.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    use ParamGroup::*;
    let d = cfg.d_model;
    let w = Init::Normal(INIT_STD);
    let mut specs = vec![ParamSpec::new("embed".into(), &[cfg.vocab, d], Base, w)];
    for i in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{i}.{s}");
        specs.push(ParamSpec::new(p("attn_norm"), &[d], Base, Init::Ones));
        specs.push(ParamSpec::new(p("attn.wq"), &[d, d], Base, w));
        specs.push(ParamSpec::new(p("attn.wk"), &[d, cfg.d_kv()], Base, w));
        specs.push(ParamSpec::new(p("attn.wv"), &[d, cfg.d_kv()], Base, w));
        specs.push(ParamSpec::new(p("attn.wo"), &[d, d], Base, w));
        if cfg.is_memory_layer(i) {
            specs.push(ParamSpec::new(p("mem.query_norm"), &[d], MemoryLayers, Init::Ones));
            specs.push(ParamSpec::new(p("mem.token_norm"), &[d], MemoryLayers, Init::Ones));
            specs.push(ParamSpec::new(p("mem.wq"), &[d, d], MemoryLayers, w));
            specs.push(ParamSpec::new(p("mem.wk"), &[d, cfg.mem_d_kv()], MemoryLayers, w));
            specs.push(ParamSpec::new(p("mem.wv"), &[d, cfg.mem_d_kv()], MemoryLayers, w));
            specs.push(ParamSpec::new(p("mem.wo"), &[d, d], MemoryLayers, w));
            specs.push(ParamSpec::new(p("mem.router_w"), &[d, cfg.chapters], MemoryLayers, w));
            specs.push(ParamSpec::new(p("mem.router_b"), &[cfg.chapters], MemoryLayers, Init::Zeros));
            if cfg.adapter_enabled {
                specs.push(ParamSpec::new(p("mem.adapter"), &[d, d], MemoryLayers, Init::Zeros));
            }
        }
        specs.push(ParamSpec::new(p("mlp_norm"), &[d], Base, Init::Ones));
        specs.push(ParamSpec::new(p("mlp.w_up"), &[d, cfg.d_ff], Base, w));
        specs.push(ParamSpec::new(p("mlp.w_gate"), &[d, cfg.d_ff], Base, w));
        specs.push(ParamSpec::new(p("mlp.w_down"), &[cfg.d_ff, d], Base, w));
    }
    specs.push(ParamSpec::new("final_norm".into(), &[d], Base, Init::Ones));
    if !cfg.tied_embeddings {
        specs.push(ParamSpec::new("lm_head".into(), &[d, cfg.vocab], Base, w));
    }
    if cfg.has_memory() {
        specs.push(ParamSpec::new(
            "bank".into(),
            &[cfg.bank_tokens, d],
            MemoryBank,
            Init::Normal(cfg.bank_init_std),
        ));
    }
    specs
}

/// Exact per-group parameter counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub base: u64,
    pub memory_layers: u64,
    pub memory_bank: u64,
    pub total: u64,
}

impl ParamCounts {
    pub fn from_specs<'a>(specs: impl IntoIterator<Item = (ParamGroup, usize)>) -> Self {
        let mut c = ParamCounts::default();
        for (group, n) in specs {
            let n = n as u64;
            match group {
                ParamGroup::Base => c.base += n,
                ParamGroup::MemoryLayers => c.memory_layers += n,
                ParamGroup::MemoryBank => c.memory_bank += n,
            }
            c.total += n;
        }
        c
    }

    /// Counts for `cfg` without allocating any tensor.
    pub fn for_config(cfg: &ModelConfig) -> Self {
        Self::from_specs(param_layout(cfg).iter().map(|s| (s.group, s.numel())))
    }
}
