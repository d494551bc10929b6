use std::io::Write;

use anyhow::{bail, Result};
use moc_core::model::{Model, ModelConfig, RouterDecision, TokenBatch};
use moc_core::numerics::Float;
use serde::Serialize;

/// Chapter utilization of one memory layer over a sample of sequences.
/// Chapter indices are global; shared chapters are not counted.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRouteStats {
    pub layer: usize,
    pub sequences: usize,
    pub shared_chapters: usize,
    /// Selection count per routed chapter, indexed from `shared_chapters`.
    pub counts: Vec<u64>,
    /// `counts / sequences`; sums to `top_k`.
    pub frequency: Vec<f64>,
    /// Entropy (nats) of the normalized selection histogram.
    pub entropy: f64,
    /// Mean over sequences of the router probability on the selected chapters.
    pub mean_routed_mass: f64,
    pub never_selected_fraction: f64,
}

pub fn entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / total as f64;
            -q * q.ln()
        })
        .sum()
}

impl LayerRouteStats {
    pub fn from_decisions(cfg: &ModelConfig, layer: usize, decisions: &[RouterDecision]) -> Self {
        let shared = cfg.shared_chapters;
        let mut counts = vec![0u64; cfg.routed_chapters()];
        let mut mass = 0.0;
        for d in decisions {
            for &c in &d.selected {
                counts[c - shared] += 1;
                mass += d.probs[c];
            }
        }
        let n = decisions.len();
        let frequency = counts.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect();
        let never = counts.iter().filter(|&&c| c == 0).count();
        LayerRouteStats {
            layer,
            sequences: n,
            shared_chapters: shared,
            entropy: entropy(&counts),
            mean_routed_mass: if n == 0 { 0.0 } else { mass / n as f64 },
            never_selected_fraction: never as f64 / counts.len().max(1) as f64,
            frequency,
            counts,
        }
    }
}

/// Routes every sequence of `batches` and summarizes the chosen memory
/// layers (all of them when `layers` is `None`).
pub fn route_stats<F: Float>(
    model: &Model<F>,
    batches: &[TokenBatch],
    layers: Option<&[usize]>,
) -> Result<Vec<LayerRouteStats>> {
    let cfg = model.config();
    if !cfg.has_memory() {
        bail!("route statistics need a model with memory layers");
    }
    let wanted: Vec<usize> = match layers {
        Some(ls) => {
            for &l in ls {
                if !cfg.is_memory_layer(l) {
                    bail!("layer {l} is not a memory layer (memory layers: {:?})", cfg.memory_layer_indices);
                }
            }
            ls.to_vec()
        }
        None => cfg.memory_layer_indices.clone(),
    };
    let mut decisions: Vec<Vec<RouterDecision>> = vec![Vec::new(); wanted.len()];
    for batch in batches {
        let trace = model.forward(batch, None)?;
        for lr in trace.routing {
            if let Some(i) = wanted.iter().position(|&l| l == lr.layer) {
                decisions[i].extend(lr.decisions);
            }
        }
    }
    Ok(wanted
        .iter()
        .zip(&decisions)
        .map(|(&l, d)| LayerRouteStats::from_decisions(cfg, l, d))
        .collect())
}

pub const ROUTE_CSV_HEADER: &str = "layer,stat,chapter,value";

/// Long format: one `frequency` row per routed chapter, then the scalars
/// with an empty chapter column.
pub fn write_route_csv<W: Write>(stats: &[LayerRouteStats], mut out: W) -> Result<()> {
    writeln!(out, "{ROUTE_CSV_HEADER}")?;
    for s in stats {
        for (i, f) in s.frequency.iter().enumerate() {
            writeln!(out, "{},frequency,{},{}", s.layer, i + s.shared_chapters, f)?;
        }
        writeln!(out, "{},sequences,,{}", s.layer, s.sequences)?;
        writeln!(out, "{},entropy,,{}", s.layer, s.entropy)?;
        writeln!(out, "{},mean_routed_mass,,{}", s.layer, s.mean_routed_mass)?;
        writeln!(out, "{},never_selected_fraction,,{}", s.layer, s.never_selected_fraction)?;
    }
    Ok(())
}

pub fn render_route_stats(stats: &[LayerRouteStats]) -> String {
    let mut s = String::new();
    for l in stats {
        let top: Vec<String> = {
            let mut idx: Vec<usize> = (0..l.counts.len()).collect();
            idx.sort_by(|&a, &b| l.counts[b].cmp(&l.counts[a]).then(a.cmp(&b)));
            idx.iter()
                .take(8)
                .filter(|&&i| l.counts[i] > 0)
                .map(|&i| format!("{}:{:.3}", i + l.shared_chapters, l.frequency[i]))
                .collect()
        };
        s.push_str(&format!(
            "layer {}: sequences {} entropy {:.4} mean_routed_mass {:.4} never_selected {:.4}\n  top chapters {}\n",
            l.layer,
            l.sequences,
            l.entropy,
            l.mean_routed_mass,
            l.never_selected_fraction,
            top.join(" ")
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[0, 5, 0]), 0.0);
        assert_eq!(entropy(&[]), 0.0);
        assert!((entropy(&[3, 3, 3, 3]) - 4f64.ln()).abs() < 1e-15);
    }
}
