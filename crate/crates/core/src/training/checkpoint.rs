//! Binary checkpoints.
//!
//! Layout: the magic `MOCCKPT1`, a little-endian `u64` header length, a JSON
//! header, then the raw little-endian tensor payloads. Header offsets are
//! relative to the start of the payload section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{Float, ParamGroup, ParamId, Precision, RngState, Tensor};
use crate::training::config::TrainConfig;
use crate::training::optim::{AdamW, Moments};

pub const MAGIC: &[u8; 8] = b"MOCCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    group: ParamGroup,
    precision: Precision,
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    model_config: ModelConfig,
    precision: Precision,
    step: u64,
    rng: RngState,
    train_config: Option<TrainConfig>,
    tensors: Vec<TensorEntry>,
    moments: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<F> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub model_config: ModelConfig,
    pub step: u64,
    pub rng: RngState,
    pub train_config: Option<TrainConfig>,
    pub tensors: Vec<NamedTensor<F>>,
    /// Adam moments keyed by parameter name; frozen parameters have none.
    pub moments: Vec<(String, Moments<F>)>,
}

/// Field-by-field differences, or `ConfigMismatch` listing them.
pub fn check_config(expected: &ModelConfig, found: &ModelConfig) -> Result<()> {
    let diff = expected.diff(found);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(MocError::ConfigMismatch(
            diff.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"),
        ))
    }
}

impl<F: Float> Checkpoint<F> {
    pub fn capture(
        model: &Model<F>,
        opt: Option<&AdamW<F>>,
        step: u64,
        rng: RngState,
        train_config: Option<&TrainConfig>,
    ) -> Self {
        let tensors = model
            .store
            .iter()
            .map(|p| NamedTensor { name: p.name.clone(), group: p.group, value: p.value.clone() })
            .collect();
        let moments = match opt {
            Some(opt) => model
                .store
                .ids()
                .filter_map(|id| opt.moments(id).map(|m| (model.store.get(id).name.clone(), m.clone())))
                .collect(),
            None => Vec::new(),
        };
        Checkpoint {
            model_config: model.config().clone(),
            step,
            rng,
            train_config: train_config.cloned(),
            tensors,
            moments,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let entry = |name: String, group: ParamGroup, t: &Tensor<F>, payload: &mut Vec<u8>| {
            let offset = payload.len() as u64;
            for &v in t.data() {
                v.write_le(payload);
            }
            TensorEntry {
                name,
                shape: t.shape().to_vec(),
                group,
                precision: F::PRECISION,
                offset,
                len: payload.len() as u64 - offset,
            }
        };
        let tensors: Vec<TensorEntry> = self
            .tensors
            .iter()
            .map(|t| entry(t.name.clone(), t.group, &t.value, &mut payload))
            .collect();
        let groups: std::collections::HashMap<&str, ParamGroup> =
            self.tensors.iter().map(|t| (t.name.as_str(), t.group)).collect();
        let mut moments = Vec::new();
        for (name, m) in &self.moments {
            let group = *groups
                .get(name.as_str())
                .ok_or_else(|| MocError::Checkpoint(format!("moments for unknown parameter `{name}`")))?;
            moments.push(entry(format!("opt.m/{name}"), group, &m.m, &mut payload));
            moments.push(entry(format!("opt.v/{name}"), group, &m.v, &mut payload));
        }
        let header = Header {
            version: FORMAT_VERSION,
            model_config: self.model_config.clone(),
            precision: F::PRECISION,
            step: self.step,
            rng: self.rng,
            train_config: self.train_config.clone(),
            tensors,
            moments,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| MocError::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing MOCCKPT1 magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(bad(format!("header length {hlen} exceeds file size")));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        if header.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.version)));
        }
        if header.precision != F::PRECISION {
            return Err(bad(format!(
                "checkpoint precision {:?} does not match requested {:?}",
                header.precision,
                F::PRECISION
            )));
        }
        let payload = &body[hlen..];
        let read = |e: &TensorEntry| -> Result<Tensor<F>> {
            let width = F::PRECISION.byte_width();
            let numel: usize = e.shape.iter().product();
            let (start, len) = (e.offset as usize, e.len as usize);
            if len != numel * width || start.checked_add(len).map_or(true, |end| end > payload.len()) {
                return Err(bad(format!("tensor `{}` has an invalid payload range", e.name)));
            }
            let data = payload[start..start + len].chunks_exact(width).map(F::read_le).collect();
            Tensor::new(e.shape.clone(), data)
        };
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            tensors.push(NamedTensor { name: e.name.clone(), group: e.group, value: read(e)? });
        }
        let mut moments = Vec::new();
        for pair in header.moments.chunks(2) {
            let [m, v] = pair else {
                return Err(bad("unpaired optimizer moment".into()));
            };
            let name = m
                .name
                .strip_prefix("opt.m/")
                .filter(|n| v.name.strip_prefix("opt.v/") == Some(*n))
                .ok_or_else(|| bad(format!("malformed moment entries `{}`, `{}`", m.name, v.name)))?;
            moments.push((name.to_string(), Moments { m: read(m)?, v: read(v)? }));
        }
        Ok(Checkpoint {
            model_config: header.model_config,
            step: header.step,
            rng: header.rng,
            train_config: header.train_config,
            tensors,
            moments,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| MocError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    /// Rebuilds the model, optionally checking its config against `expected`.
    pub fn to_model(&self, expected: Option<&ModelConfig>) -> Result<Model<F>> {
        if let Some(expected) = expected {
            check_config(expected, &self.model_config)?;
        }
        let mut store = crate::numerics::ParamStore::new();
        for t in &self.tensors {
            store.add(t.name.clone(), t.value.clone(), t.group);
        }
        Model::from_store(self.model_config.clone(), store)
    }

    /// Optimizer for `model` with the saved moments restored.
    pub fn to_optimizer(&self, model: &Model<F>, betas: (f64, f64), weight_decay: f64, frozen: &[ParamGroup]) -> Result<AdamW<F>> {
        let mut opt = AdamW::new(&model.store, betas, weight_decay, frozen);
        let restored: std::collections::HashSet<&str> = self.moments.iter().map(|(n, _)| n.as_str()).collect();
        for (name, m) in &self.moments {
            let id: ParamId = model
                .store
                .find(name)
                .ok_or_else(|| MocError::Checkpoint(format!("moments for unknown parameter `{name}`")))?;
            opt.set_moments(id, m.clone())?;
        }
        for id in model.store.ids() {
            let p = model.store.get(id);
            if opt.moments(id).is_some() && !restored.contains(p.name.as_str()) && !self.moments.is_empty() {
                return Err(MocError::Checkpoint(format!("checkpoint lacks optimizer moments for `{}`", p.name)));
            }
        }
        Ok(opt)
    }
}
