use std::path::Path;

use anyhow::{bail, Context, Result};
use moc_core::model::{ModelConfig, PRESETS};
use moc_core::retention::{FactSpec, InstructionSpec, RetentionConfig, Variant};
use moc_core::training::{DataConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Retention protocol settings, phase A included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionSection {
    pub phase_a: TrainConfig,
    pub phase_b: TrainConfig,
    pub facts: FactSpec,
    pub instructions: InstructionSpec,
    pub context_multiplier: usize,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl RetentionSection {
    pub fn micro() -> Self {
        let rc = RetentionConfig::micro();
        RetentionSection {
            phase_a: RetentionConfig::micro_phase_a(),
            phase_b: rc.phase_b,
            facts: rc.facts,
            instructions: rc.instructions,
            context_multiplier: rc.context_multiplier,
            variants: rc.variants,
            seeds: rc.seeds,
        }
    }

    pub fn protocol(&self) -> RetentionConfig {
        RetentionConfig {
            facts: self.facts.clone(),
            instructions: self.instructions.clone(),
            phase_b: self.phase_b.clone(),
            context_multiplier: self.context_multiplier,
            variants: self.variants.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

/// A complete run description. On disk it is a TOML document that may name a
/// `preset`; the preset is expanded first and the document's keys override it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub retention: RetentionSection,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        let train = if name == "micro" { TrainConfig::micro() } else { TrainConfig::paper_pretrain() };
        Ok(RunConfig { model, train, data: DataConfig::default(), retention: RetentionSection::micro() })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut doc: toml::Table = text.parse().context("config is not valid TOML")?;
        let preset = match doc.remove("preset") {
            None => None,
            Some(toml::Value::String(s)) => Some(s),
            Some(other) => bail!("`preset` must be a string, found {}", other.type_str()),
        };
        let value = match preset {
            Some(name) => {
                let mut base = toml::Table::try_from(Self::preset(&name)?)?;
                merge(&mut base, doc);
                base
            }
            None => doc,
        };
        let cfg: RunConfig = value.try_into().context("invalid run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    /// `--config` wins over `--preset`; with neither, `micro`.
    pub fn resolve(config: Option<&Path>, preset: Option<&str>) -> Result<Self> {
        let cfg = match (config, preset) {
            (Some(path), _) => Self::load(path)?,
            (None, Some(name)) => Self::preset(name)?,
            (None, None) => Self::preset("micro")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().context("[model]")?;
        self.train.validate().context("[train]")?;
        self.retention.phase_a.validate().context("[retention.phase_a]")?;
        if self.retention.phase_b.steps > 0 {
            self.retention.phase_b.validate().context("[retention.phase_b]")?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &PRESETS
}

/// Recursively overlays `over` onto `base`. Tables merge key by key; any
/// other value replaces. Keys absent from `base` are kept so that
/// deserialization reports them as unknown.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !is_tagged(b) => {
                merge(b, o);
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

// Internally tagged enums (schedules) are replaced whole so a variant switch
// does not inherit the old variant's fields.
fn is_tagged(t: &toml::Table) -> bool {
    t.contains_key("kind")
}
