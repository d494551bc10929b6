use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};

/// Standard deviation for every weight matrix at initialization.
pub const INIT_STD: f64 = 0.02;

/// Full architectural description of a model. An empty
/// `memory_layer_indices` gives a plain dense transformer and the memory
/// fields are then ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub rope_theta: f64,
    pub tied_embeddings: bool,
    pub memory_layer_indices: Vec<usize>,
    /// Total memory tokens `N_m`; must equal `chapters · chapter_size`.
    pub bank_tokens: usize,
    /// Chapter count `C`, shared chapters included.
    pub chapters: usize,
    pub shared_chapters: usize,
    pub chapter_size: usize,
    pub top_k: usize,
    pub mem_heads: usize,
    pub mem_kv_heads: usize,
    pub routed_scaling: f64,
    pub lb_coeff: f64,
    pub z_coeff: f64,
    pub adapter_enabled: bool,
    pub bank_init_std: f64,
    pub max_seq_len: usize,
}

pub const PRESETS: [&str; 4] = ["moc-paper", "vanilla-backbone", "vanilla-iso", "micro"];

impl ModelConfig {
    /// The 16-layer MoC model: memory at layers {2, 6, 10, 14}, a 262,208-token
    /// bank in 4,097 chapters of 64 (one shared), top-64 routing.
    pub fn moc_paper() -> Self {
        ModelConfig {
            d_model: 768,
            n_layers: 16,
            n_heads: 12,
            n_kv_heads: 4,
            d_ff: 2304,
            vocab: 49152,
            rope_theta: 100_000.0,
            tied_embeddings: true,
            memory_layer_indices: vec![2, 6, 10, 14],
            bank_tokens: 262_208,
            chapters: 4097,
            shared_chapters: 1,
            chapter_size: 64,
            top_k: 64,
            mem_heads: 12,
            mem_kv_heads: 12,
            routed_scaling: 2.5,
            lb_coeff: 0.01,
            z_coeff: 0.001,
            adapter_enabled: false,
            bank_init_std: 0.02,
            max_seq_len: 2048,
        }
    }

    pub fn vanilla_backbone() -> Self {
        ModelConfig {
            memory_layer_indices: Vec::new(),
            ..Self::moc_paper()
        }
    }

    /// Dense baseline deepened to 24 layers to match the MoC training compute.
    pub fn vanilla_iso() -> Self {
        ModelConfig {
            n_layers: 24,
            ..Self::vanilla_backbone()
        }
    }

    /// Desk-scale MoC model used for tests and the synthetic experiments.
    pub fn micro() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 192,
            vocab: 256,
            rope_theta: 100_000.0,
            tied_embeddings: true,
            memory_layer_indices: vec![1, 3],
            bank_tokens: 17 * 8,
            chapters: 17,
            shared_chapters: 1,
            chapter_size: 8,
            top_k: 4,
            mem_heads: 4,
            mem_kv_heads: 4,
            routed_scaling: 2.5,
            lb_coeff: 0.01,
            z_coeff: 0.001,
            adapter_enabled: false,
            bank_init_std: 0.02,
            max_seq_len: 128,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "moc-paper" => Ok(Self::moc_paper()),
            "vanilla-backbone" => Ok(Self::vanilla_backbone()),
            "vanilla-iso" => Ok(Self::vanilla_iso()),
            "micro" => Ok(Self::micro()),
            other => Err(MocError::config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn without_memory(&self) -> Self {
        ModelConfig {
            memory_layer_indices: Vec::new(),
            ..self.clone()
        }
    }

    pub fn has_memory(&self) -> bool {
        !self.memory_layer_indices.is_empty()
    }

    pub fn is_memory_layer(&self, layer: usize) -> bool {
        self.memory_layer_indices.contains(&layer)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the self-attention K and V projections.
    pub fn d_kv(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn mem_head_dim(&self) -> usize {
        self.d_model / self.mem_heads
    }

    pub fn mem_d_kv(&self) -> usize {
        self.mem_kv_heads * self.mem_head_dim()
    }

    pub fn routed_chapters(&self) -> usize {
        self.chapters - self.shared_chapters
    }

    /// Memory tokens attended per sequence: `(shared + k) · T`.
    pub fn selected_tokens(&self) -> usize {
        (self.shared_chapters + self.top_k) * self.chapter_size
    }

    /// Checks every structural constraint and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg)
            }
        };
        need(self.d_model > 0 && self.n_heads > 0 && self.n_kv_heads > 0, "d_model, n_heads and n_kv_heads must be positive".into());
        need(self.vocab > 0 && self.d_ff > 0, "vocab and d_ff must be positive".into());
        need(self.max_seq_len > 0, "max_seq_len must be positive".into());
        if self.n_heads > 0 && self.n_kv_heads > 0 {
            need(
                self.d_model % self.n_heads == 0,
                format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads),
            );
            need(
                self.n_heads % self.n_kv_heads == 0,
                format!("n_heads {} not divisible by n_kv_heads {}", self.n_heads, self.n_kv_heads),
            );
            need(self.head_dim() % 2 == 0, format!("head_dim {} must be even for RoPE", self.head_dim()));
        }
        need(self.rope_theta > 0.0, "rope_theta must be positive".into());
        let mut seen = self.memory_layer_indices.clone();
        seen.sort_unstable();
        seen.dedup();
        need(seen.len() == self.memory_layer_indices.len(), "memory_layer_indices has duplicates".into());
        need(
            self.memory_layer_indices.iter().all(|&i| i < self.n_layers),
            format!("memory_layer_indices {:?} not within [0, {})", self.memory_layer_indices, self.n_layers),
        );
        if self.has_memory() {
            need(
                self.bank_tokens == self.chapters * self.chapter_size,
                format!(
                    "bank_tokens {} != chapters {} * chapter_size {}",
                    self.bank_tokens, self.chapters, self.chapter_size
                ),
            );
            need(self.chapter_size > 0, "chapter_size must be positive".into());
            need(self.top_k > 0, "top_k must be positive".into());
            need(
                self.shared_chapters + self.top_k <= self.chapters,
                format!(
                    "shared_chapters {} + top_k {} exceeds chapters {}",
                    self.shared_chapters, self.top_k, self.chapters
                ),
            );
            need(
                self.mem_heads > 0 && self.mem_kv_heads > 0 && self.d_model % self.mem_heads == 0,
                format!("d_model {} not divisible by mem_heads {}", self.d_model, self.mem_heads),
            );
            need(
                self.mem_kv_heads > 0 && self.mem_heads % self.mem_kv_heads == 0,
                format!("mem_heads {} not divisible by mem_kv_heads {}", self.mem_heads, self.mem_kv_heads),
            );
            need(self.routed_scaling > 0.0, "routed_scaling must be positive".into());
            need(self.bank_init_std >= 0.0, "bank_init_std must be non-negative".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(MocError::config(bad.join("; ")))
        }
    }

    /// Field-by-field differences, formatted `field: self != other`.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object().expect("object"), b.as_object().expect("object"));
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, v)| format!("{k}: {v} != {}", b[k]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("nope").is_err());
    }

    #[test]
    fn moc_preset_geometry() {
        let c = ModelConfig::moc_paper();
        assert_eq!(c.bank_tokens / c.chapters, 64);
        assert_eq!(c.d_kv(), 256);
        assert_eq!(c.selected_tokens(), 4160);
        assert_eq!(ModelConfig::micro().bank_tokens, 136);
    }

    #[test]
    fn violations_are_all_listed() {
        let cfg = ModelConfig {
            bank_tokens: 100,
            top_k: 17,
            n_kv_heads: 3,
            memory_layer_indices: vec![1, 9],
            ..ModelConfig::micro()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        for part in ["bank_tokens 100", "top_k 17", "n_kv_heads 3", "memory_layer_indices"] {
            assert!(msg.contains(part), "{msg}");
        }
    }

    #[test]
    fn diff_names_changed_fields() {
        let a = ModelConfig::micro();
        let b = ModelConfig { top_k: 3, ..a.clone() };
        assert_eq!(a.diff(&b), vec!["top_k: 4 != 3".to_string()]);
        assert!(a.diff(&a).is_empty());
    }
}
