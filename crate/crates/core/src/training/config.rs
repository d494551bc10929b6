use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::numerics::ParamGroup;
use crate::training::schedule::Schedule;

/// How the memory bank is optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    /// No updates and no optimizer state.
    Frozen,
    /// One tenth of the base rate.
    LowLr,
    /// Same rate as the base group.
    EqualLr,
    /// `lr.memory_bank` as given.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupLrs {
    pub base: f64,
    pub memory_layers: f64,
    pub memory_bank: f64,
}

impl GroupLrs {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Base => self.base,
            ParamGroup::MemoryLayers => self.memory_layers,
            ParamGroup::MemoryBank => self.memory_bank,
        }
    }

    pub fn scaled(&self, factor: f64) -> GroupLrs {
        GroupLrs {
            base: self.base * factor,
            memory_layers: self.memory_layers * factor,
            memory_bank: self.memory_bank * factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub seq_len: usize,
    pub lr: GroupLrs,
    pub bank_mode: BankMode,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub clip_norm: f64,
    pub seed: u64,
    pub eval_every: u64,
    pub eval_batches: usize,
    /// Checkpoint cadence in steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Desk-scale pretraining for the `micro` model.
    pub fn micro() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 8,
            grad_accum: 1,
            seq_len: 64,
            lr: GroupLrs { base: 3e-3, memory_layers: 3e-3, memory_bank: 3e-3 },
            bank_mode: BankMode::EqualLr,
            schedule: Schedule::Wsd { warmup: 20, decay_start: 160, min_ratio: 0.1 },
            weight_decay: 0.1,
            betas: (0.9, 0.95),
            clip_norm: 1.0,
            seed: 7,
            eval_every: 10,
            eval_batches: 4,
            checkpoint_every: 0,
        }
    }

    /// Desk-scale instruction tuning: one tenth of the pretraining rates,
    /// cosine schedule, doubled context.
    pub fn micro_ift() -> Self {
        let pre = Self::micro();
        TrainConfig {
            steps: 100,
            seq_len: 2 * pre.seq_len,
            lr: pre.lr.scaled(0.1),
            bank_mode: BankMode::LowLr,
            schedule: Schedule::Cosine { warmup: 10 },
            ..pre
        }
    }

    /// Pretraining settings of the 16-layer model.
    pub fn paper_pretrain() -> Self {
        TrainConfig {
            steps: 9600,
            batch_size: 32,
            grad_accum: 4,
            seq_len: 1024,
            lr: GroupLrs { base: 3e-4, memory_layers: 6e-4, memory_bank: 6e-4 },
            bank_mode: BankMode::Custom,
            schedule: Schedule::Wsd { warmup: 250, decay_start: 8160, min_ratio: 0.1 },
            weight_decay: 0.1,
            betas: (0.9, 0.95),
            clip_norm: 1.0,
            seed: 0,
            eval_every: 500,
            eval_batches: 16,
            checkpoint_every: 1000,
        }
    }

    pub fn paper_ift() -> Self {
        TrainConfig {
            steps: 3200,
            grad_accum: 1,
            seq_len: 2048,
            lr: GroupLrs { base: 3e-5, memory_layers: 1.5e-5, memory_bank: 5e-6 },
            schedule: Schedule::Cosine { warmup: 250 },
            ..Self::paper_pretrain()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro()),
            "micro-ift" => Ok(Self::micro_ift()),
            "paper-pretrain" => Ok(Self::paper_pretrain()),
            "paper-ift" => Ok(Self::paper_ift()),
            _ => Err(MocError::config(format!(
                "unknown train preset `{name}` (expected micro, micro-ift, paper-pretrain, paper-ift)"
            ))),
        }
    }

    /// Peak rate of each group once `bank_mode` is applied.
    pub fn group_lrs(&self) -> GroupLrs {
        let memory_bank = match self.bank_mode {
            BankMode::Frozen => 0.0,
            BankMode::LowLr => self.lr.base / 10.0,
            BankMode::EqualLr => self.lr.base,
            BankMode::Custom => self.lr.memory_bank,
        };
        GroupLrs { memory_bank, ..self.lr }
    }

    pub fn frozen_groups(&self) -> Vec<ParamGroup> {
        match self.bank_mode {
            BankMode::Frozen => vec![ParamGroup::MemoryBank],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.steps == 0 {
            errs.push("steps must be >= 1".to_string());
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            errs.push("batch_size and grad_accum must be >= 1".to_string());
        }
        if self.seq_len < 2 {
            errs.push(format!("seq_len {} must be >= 2", self.seq_len));
        }
        for (name, v) in [("lr.base", self.lr.base), ("lr.memory_layers", self.lr.memory_layers), ("lr.memory_bank", self.lr.memory_bank)] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            errs.push(format!("betas ({b1}, {b2}) must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            errs.push(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            errs.push(format!("clip_norm {} must be > 0", self.clip_norm));
        }
        if self.eval_every == 0 || self.eval_batches == 0 {
            errs.push("eval_every and eval_batches must be >= 1".to_string());
        }
        if self.steps > 0 {
            match self.schedule.validate(self.steps) {
                Err(MocError::Config(m)) => errs.push(m),
                Err(e) => errs.push(e.to_string()),
                Ok(()) => {}
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(MocError::config(errs.join("; ")))
        }
    }
}
