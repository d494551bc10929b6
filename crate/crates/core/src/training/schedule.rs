use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Warmup, stable, decay: linear warmup to the base rate, hold until
    /// `decay_start`, then linear decay to `min_ratio · base` at the final step.
    Wsd { warmup: u64, decay_start: u64, min_ratio: f64 },
    /// Linear warmup, then cosine decay to zero at the final step.
    Cosine { warmup: u64 },
}

impl Schedule {
    pub fn warmup(&self) -> u64 {
        match *self {
            Schedule::Wsd { warmup, .. } | Schedule::Cosine { warmup } => warmup,
        }
    }

    pub fn validate(&self, total_steps: u64) -> Result<()> {
        if self.warmup() > total_steps {
            return Err(MocError::config(format!(
                "warmup {} exceeds total steps {total_steps}",
                self.warmup()
            )));
        }
        if let Schedule::Wsd { warmup, decay_start, min_ratio } = *self {
            if decay_start >= total_steps {
                return Err(MocError::config(format!(
                    "decay_start {decay_start} must be below total steps {total_steps}"
                )));
            }
            if decay_start < warmup {
                return Err(MocError::config(format!("decay_start {decay_start} is before the end of warmup {warmup}")));
            }
            if !(0.0..=1.0).contains(&min_ratio) {
                return Err(MocError::config(format!("min_ratio {min_ratio} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Learning rate at `step` of a run of `total_steps`. Steps past the end keep
/// the final rate.
pub fn lr_at_step(schedule: &Schedule, step: u64, total_steps: u64, base: f64) -> f64 {
    let warmup = schedule.warmup();
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let step = step.min(total_steps);
    match *schedule {
        Schedule::Wsd { decay_start, min_ratio, .. } => {
            if step <= decay_start {
                base
            } else {
                let frac = (step - decay_start) as f64 / (total_steps - decay_start) as f64;
                base * (1.0 - (1.0 - min_ratio) * frac)
            }
        }
        Schedule::Cosine { .. } => {
            if total_steps == warmup {
                return base;
            }
            let frac = (step - warmup) as f64 / (total_steps - warmup) as f64;
            base * (1.0 + (PI * frac).cos()) / 2.0
        }
    }
}
