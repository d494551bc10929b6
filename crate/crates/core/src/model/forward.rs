use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::model::memory::{selection_frequencies, RouterDecision};
use crate::model::{Model, TokenBatch};
use crate::numerics::{Float, NodeId, Tape, Tensor, RMSNORM_EPS};

/// Routing decisions of one memory layer, one per sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRouting {
    pub layer: usize,
    pub decisions: Vec<RouterDecision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Shifted next-token cross-entropy; 0 when no targets were given.
    pub lm_loss: f64,
    pub lb_loss: f64,
    pub z_loss: f64,
    /// `lm_loss + lb_coeff·lb_loss + z_coeff·z_loss`.
    pub total_loss: f64,
    pub routing: Vec<LayerRouting>,
    /// Per memory layer: `‖memory readout‖ / (‖self-attention output‖ + ‖memory readout‖)`.
    pub memory_mass: Vec<f64>,
}

/// A recorded forward pass, kept for a backward sweep.
pub struct ForwardPass<F> {
    pub tape: Tape<F>,
    pub loss: Option<NodeId>,
    pub trace: ForwardTrace,
}

/// Which rows of the final hidden state feed the LM head.
enum Head<'a> {
    /// Loss on positions `0..L-1` against `targets[t+1]`.
    Loss(&'a TokenBatch),
    /// Logits of the last position of each sequence.
    Last,
    /// Logits of every position.
    All,
}

impl<F: Float> Model<F> {
    fn check_tokens(&self, tokens: &TokenBatch) -> Result<()> {
        let vocab = self.config().vocab;
        if let Some(&t) = tokens.tokens.iter().find(|&&t| t >= vocab) {
            return Err(MocError::Index(format!("token {t} outside vocabulary of {vocab}")));
        }
        self.check_seq_len(tokens.seq_len)
    }

    fn run(&self, tokens: &TokenBatch, head: Head<'_>) -> Result<(Tape<F>, Option<NodeId>, Option<NodeId>, ForwardTrace)> {
        self.check_tokens(tokens)?;
        let cfg = self.config();
        let (batch, seq_len) = (tokens.batch, tokens.seq_len);
        let mut tape = Tape::new();
        let embed = tape.param(&self.store, self.embed);
        let mut h = tape.gather_rows(embed, tokens.tokens.clone())?;

        let mut routing = Vec::new();
        let mut memory_mass = Vec::new();
        let mut router_nodes = Vec::new();
        for layer in 0..cfg.n_layers {
            let a = self.self_attention_node(&mut tape, h, layer, batch, seq_len)?;
            h = tape.add(h, a)?;
            if cfg.is_memory_layer(layer) {
                let out = self.memory_sublayer_node(&mut tape, h, layer, batch, seq_len, None)?;
                let (na, nm) = (tape.value(a).sum_squares().sqrt(), tape.value(out.readout).sum_squares().sqrt());
                memory_mass.push(if na + nm > 0.0 { nm / (na + nm) } else { 0.0 });
                h = tape.add(h, out.readout)?;
                router_nodes.push((out.router.logits, out.router.probs, out.router.decisions.clone()));
                routing.push(LayerRouting { layer, decisions: out.router.decisions });
            }
            let m = self.mlp_node(&mut tape, h, layer)?;
            h = tape.add(h, m)?;
        }
        let gain = tape.param(&self.store, self.final_norm);
        let h = tape.rmsnorm(h, gain, F::of(RMSNORM_EPS))?;

        let rows: Option<Vec<usize>> = match head {
            Head::All => None,
            Head::Last => Some((0..batch).map(|b| b * seq_len + seq_len - 1).collect()),
            Head::Loss(_) => Some((0..batch).flat_map(|b| (0..seq_len - 1).map(move |t| b * seq_len + t)).collect()),
        };
        if matches!(head, Head::Loss(_)) && seq_len < 2 {
            return Err(MocError::dim("next-token loss needs sequences of length ≥ 2"));
        }
        let x = match rows {
            Some(r) => tape.gather_rows(h, r)?,
            None => h,
        };
        let logits = match self.lm_head {
            Some(w) => {
                let w = tape.param(&self.store, w);
                tape.matmul(x, w)?
            }
            None => tape.matmul_nt(x, embed)?,
        };

        let mut trace = ForwardTrace {
            lm_loss: 0.0,
            lb_loss: 0.0,
            z_loss: 0.0,
            total_loss: 0.0,
            routing,
            memory_mass,
        };

        let (lb, z) = if router_nodes.is_empty() {
            (None, None)
        } else {
            let n = router_nodes.len();
            let mut lb_sum: Option<NodeId> = None;
            let mut z_sum: Option<NodeId> = None;
            for (logit_node, prob_node, decisions) in &router_nodes {
                let freq = selection_frequencies(decisions, cfg).into_iter().map(F::of).collect();
                let lb = tape.load_balance(*prob_node, freq, cfg.shared_chapters)?;
                let lse = tape.logsumexp_rows(*logit_node);
                let sq = tape.square(lse);
                let z = tape.mean(sq);
                lb_sum = Some(match lb_sum {
                    Some(acc) => tape.add(acc, lb)?,
                    None => lb,
                });
                z_sum = Some(match z_sum {
                    Some(acc) => tape.add(acc, z)?,
                    None => z,
                });
            }
            let inv = F::of(1.0 / n as f64);
            let lb = tape.scale(lb_sum.expect("at least one layer"), inv);
            let z = tape.scale(z_sum.expect("at least one layer"), inv);
            trace.lb_loss = tape.value(lb).item().as_f64();
            trace.z_loss = tape.value(z).item().as_f64();
            (Some(lb), Some(z))
        };

        let loss = match head {
            Head::Loss(targets) => {
                if targets.batch != batch || targets.seq_len != seq_len {
                    return Err(MocError::dim("targets must have the same shape as tokens"));
                }
                if let Some(&t) = targets.tokens.iter().find(|&&t| t >= cfg.vocab) {
                    return Err(MocError::Index(format!("target {t} outside vocabulary of {}", cfg.vocab)));
                }
                let tgt: Vec<usize> = (0..batch).flat_map(|b| targets.row(b)[1..].iter().copied()).collect();
                let ce = tape.cross_entropy(logits, tgt)?;
                trace.lm_loss = tape.value(ce).item().as_f64();
                let mut total = ce;
                if let (Some(lb), Some(z)) = (lb, z) {
                    let lb_term = tape.scale(lb, F::of(cfg.lb_coeff));
                    let z_term = tape.scale(z, F::of(cfg.z_coeff));
                    total = tape.add(total, lb_term)?;
                    total = tape.add(total, z_term)?;
                }
                trace.total_loss = tape.value(total).item().as_f64();
                Some(total)
            }
            _ => {
                trace.total_loss = cfg.lb_coeff * trace.lb_loss + cfg.z_coeff * trace.z_loss;
                None
            }
        };
        Ok((tape, loss, Some(logits), trace))
    }

    /// Full forward pass. With `targets`, computes the shifted next-token loss
    /// (position `t` predicts `targets[t+1]`) plus the auxiliary routing losses.
    pub fn forward(&self, tokens: &TokenBatch, targets: Option<&TokenBatch>) -> Result<ForwardTrace> {
        let head = match targets {
            Some(t) => Head::Loss(t),
            None => Head::Last,
        };
        Ok(self.run(tokens, head)?.3)
    }

    /// Forward pass with its tape retained; `loss` is set when targets are given.
    pub fn forward_pass(&self, tokens: &TokenBatch, targets: &TokenBatch) -> Result<ForwardPass<F>> {
        let (tape, loss, _, trace) = self.run(tokens, Head::Loss(targets))?;
        Ok(ForwardPass { tape, loss, trace })
    }

    /// Runs forward and backward on the total loss scaled by `loss_scale`,
    /// adding the result into the stored parameter gradients.
    pub fn accumulate_gradients(&mut self, tokens: &TokenBatch, targets: &TokenBatch, loss_scale: f64) -> Result<ForwardTrace> {
        let ForwardPass { mut tape, loss, trace } = self.forward_pass(tokens, targets)?;
        let loss = loss.expect("targets given");
        let scaled = tape.scale(loss, F::of(loss_scale));
        tape.backward(scaled)?.accumulate_into(&mut self.store);
        Ok(trace)
    }

    /// Logits for every position, `[(batch·L) × vocab]`.
    pub fn logits(&self, tokens: &TokenBatch) -> Result<Tensor<F>> {
        let (tape, _, logits, _) = self.run(tokens, Head::All)?;
        Ok(tape.value(logits.expect("head evaluated")).clone())
    }

    /// Logits of the final position of each sequence, `[batch × vocab]`.
    pub fn last_logits(&self, tokens: &TokenBatch) -> Result<Tensor<F>> {
        let (tape, _, logits, _) = self.run(tokens, Head::Last)?;
        Ok(tape.value(logits.expect("head evaluated")).clone())
    }

    /// Greedy continuation of equal-length prompts by `n_new` tokens each
    /// (ties in the argmax go to the lower token id).
    pub fn greedy_generate(&self, prompts: &[Vec<usize>], n_new: usize) -> Result<Vec<Vec<usize>>> {
        let mut seqs = prompts.to_vec();
        for _ in 0..n_new {
            let batch = TokenBatch::from_rows(&seqs)?;
            let logits = self.last_logits(&batch)?;
            for (b, seq) in seqs.iter_mut().enumerate() {
                let row = logits.row(b);
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                seq.push(best);
            }
        }
        Ok(seqs
            .into_iter()
            .zip(prompts)
            .map(|(s, p)| s[p.len()..].to_vec())
            .collect())
    }
}
