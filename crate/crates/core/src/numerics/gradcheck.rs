//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;

use crate::error::{MocError, Result};
use crate::numerics::param::ParamStore;
use crate::numerics::rng::RngState;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many entries per parameter tensor (sampled
    /// deterministically); `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Relative error used throughout: `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the gradients already stored in `store` (the analytic ones) with
/// central differences `(f(θ+h) − f(θ−h)) / 2h` of `f`.
pub fn grad_check(
    store: &mut ParamStore<f64>,
    mut f: impl FnMut(&ParamStore<f64>) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    let root = RngState::new(opts.seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let numel = store.get(id).value.numel();
        let entries: Vec<usize> = match opts.max_entries_per_param {
            Some(m) if m < numel => {
                let mut idx = sample(&mut root.named(&name).rng(), numel, m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..numel).collect(),
        };
        for i in entries {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.h;
            let plus = f(store);
            store.get_mut(id).value.data_mut()[i] = orig - opts.h;
            let minus = f(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(MocError::numeric(
                    format!("{name}[{i}]"),
                    format!("objective is non-finite under perturbation ({plus}, {minus})"),
                ));
            }
            let numeric = (plus - minus) / (2.0 * opts.h);
            let analytic = store.get(id).grad.data()[i];
            let err = relative_error(analytic, numeric);
            if err > report.max_rel_error || report.entries_checked == 0 {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
