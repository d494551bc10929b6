use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::model::{Model, ModelConfig, TokenBatch};
use crate::numerics::{Float, RngState};
use crate::training::checkpoint::{check_config, Checkpoint};
use crate::training::config::{GroupLrs, TrainConfig};
use crate::training::corpus::TokenCorpus;
use crate::training::optim::{clip_grad_norm, AdamW, StepAudit};
use crate::training::schedule::lr_at_step;

pub const METRICS_HEADER: &str = "step,split,lm_loss,lb_loss,z_loss,total_loss,lr_base,lr_mem,lr_bank,grad_norm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub split: String,
    pub lm_loss: f64,
    pub lb_loss: f64,
    pub z_loss: f64,
    pub total_loss: f64,
    pub lr_base: f64,
    pub lr_mem: f64,
    pub lr_bank: f64,
    /// Pre-clip gradient norm; empty on eval rows.
    pub grad_norm: Option<f64>,
}

/// Streams metrics rows as CSV.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter { inner: csv::Writer::from_writer(out) }
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = MetricsWriter::new(out);
    for r in rows {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Clone, Debug, Default)]
struct LossSums {
    lm: f64,
    lb: f64,
    z: f64,
    total: f64,
}

/// Step-by-step training driver. Batch `s`, micro-batch `j` is drawn from the
/// substream `(seed, s, j)`, so a run resumed from a checkpoint sees exactly
/// the batches an uninterrupted run would.
pub struct Trainer<F: Float> {
    pub model: Model<F>,
    pub cfg: TrainConfig,
    pub opt: AdamW<F>,
    pub step: u64,
    rng: RngState,
    last_good: Checkpoint<F>,
    last_audit: Option<StepAudit>,
}

impl<F: Float> Trainer<F> {
    pub fn new(model: Model<F>, cfg: TrainConfig) -> Result<Self> {
        let opt = AdamW::new(&model.store, cfg.betas, cfg.weight_decay, &cfg.frozen_groups());
        Self::assemble(model, cfg, opt, 0)
    }

    /// Continues a run from `ckpt`, restoring its optimizer moments and step.
    pub fn resume(ckpt: &Checkpoint<F>, cfg: TrainConfig) -> Result<Self> {
        let model = ckpt.to_model(None)?;
        let opt = ckpt.to_optimizer(&model, cfg.betas, cfg.weight_decay, &cfg.frozen_groups())?;
        Self::assemble(model, cfg, opt, ckpt.step)
    }

    fn assemble(model: Model<F>, cfg: TrainConfig, opt: AdamW<F>, step: u64) -> Result<Self> {
        cfg.validate()?;
        let max = model.config().max_seq_len;
        if cfg.seq_len > max {
            return Err(MocError::SequenceLength { len: cfg.seq_len, max });
        }
        let rng = RngState::new(cfg.seed).named("train/batches");
        let last_good = Checkpoint::capture(&model, Some(&opt), step, rng, Some(&cfg));
        Ok(Trainer { model, cfg, opt, step, rng, last_good, last_audit: None })
    }

    pub fn checkpoint(&self) -> Checkpoint<F> {
        Checkpoint::capture(&self.model, Some(&self.opt), self.step, self.rng, Some(&self.cfg))
    }

    /// Most recent state known to be finite.
    pub fn last_good(&self) -> &Checkpoint<F> {
        &self.last_good
    }

    pub fn last_audit(&self) -> Option<&StepAudit> {
        self.last_audit.as_ref()
    }

    /// Scheduled rate of every group at `step`.
    pub fn lrs_at(&self, step: u64) -> GroupLrs {
        let peak = self.cfg.group_lrs();
        let at = |base| lr_at_step(&self.cfg.schedule, step, self.cfg.steps, base);
        GroupLrs { base: at(peak.base), memory_layers: at(peak.memory_layers), memory_bank: at(peak.memory_bank) }
    }

    pub fn batch_for(&self, corpus: &TokenCorpus, step: u64, micro: usize) -> Result<TokenBatch> {
        corpus.sample_batch(self.rng.substream(step).substream(micro as u64), self.cfg.batch_size, self.cfg.seq_len)
    }

    fn abort(&self, step: u64, e: MocError) -> MocError {
        MocError::TrainAbort { step, source: Box::new(e) }
    }

    pub fn train_step(&mut self, corpus: &TokenCorpus) -> Result<MetricsRow> {
        let step = self.step + 1;
        self.model.store.zero_grads();
        let accum = self.cfg.grad_accum;
        let scale = 1.0 / accum as f64;
        let mut sums = LossSums::default();
        for micro in 0..accum {
            let batch = self.batch_for(corpus, step, micro)?;
            let trace = self
                .model
                .accumulate_gradients(&batch, &batch, scale)
                .map_err(|e| if e.is_numeric() { self.abort(step, e) } else { e })?;
            sums.lm += trace.lm_loss * scale;
            sums.lb += trace.lb_loss * scale;
            sums.z += trace.z_loss * scale;
            sums.total += trace.total_loss * scale;
        }
        if !sums.total.is_finite() {
            return Err(self.abort(step, MocError::numeric("loss", format!("total loss is {}", sums.total))));
        }
        let frozen = self.cfg.frozen_groups();
        let clip = clip_grad_norm(&mut self.model.store, self.cfg.clip_norm, &frozen);
        let lrs = self.lrs_at(step);
        let audit = self.opt.step(&mut self.model.store, &lrs, step).map_err(|e| self.abort(step, e))?;
        for a in &audit.applied {
            if a.lr != lrs.get(a.group) {
                return Err(self.abort(
                    step,
                    MocError::numeric(&a.name, format!("updated with lr {} instead of its group rate", a.lr)),
                ));
            }
        }
        self.last_audit = Some(audit);
        self.step = step;
        Ok(MetricsRow {
            step,
            split: "train".into(),
            lm_loss: sums.lm,
            lb_loss: sums.lb,
            z_loss: sums.z,
            total_loss: sums.total,
            lr_base: lrs.base,
            lr_mem: lrs.memory_layers,
            lr_bank: lrs.memory_bank,
            grad_norm: Some(clip.norm),
        })
    }

    /// Mean losses over the fixed held-out batches.
    pub fn evaluate(&self, corpus: &TokenCorpus) -> Result<MetricsRow> {
        let batches = corpus.eval_batches(self.cfg.eval_batches, self.cfg.batch_size, self.cfg.seq_len)?;
        let n = batches.len() as f64;
        let mut sums = LossSums::default();
        for b in &batches {
            let t = self.model.forward(b, Some(b))?;
            sums.lm += t.lm_loss / n;
            sums.lb += t.lb_loss / n;
            sums.z += t.z_loss / n;
            sums.total += t.total_loss / n;
        }
        let lrs = self.lrs_at(self.step);
        Ok(MetricsRow {
            step: self.step,
            split: "eval".into(),
            lm_loss: sums.lm,
            lb_loss: sums.lb,
            z_loss: sums.z,
            total_loss: sums.total,
            lr_base: lrs.base,
            lr_mem: lrs.memory_layers,
            lr_bank: lrs.memory_bank,
            grad_norm: None,
        })
    }

    /// Trains until `cfg.steps`, passing every metrics row to `on_row` and
    /// every periodic checkpoint to `on_checkpoint`.
    pub fn run_with(
        &mut self,
        corpus: &TokenCorpus,
        mut on_row: impl FnMut(&MetricsRow) -> Result<()>,
        mut on_checkpoint: impl FnMut(&Checkpoint<F>) -> Result<()>,
    ) -> Result<()> {
        corpus.check_fits(self.cfg.seq_len)?;
        while self.step < self.cfg.steps {
            let row = self.train_step(corpus)?;
            on_row(&row)?;
            let step = self.step;
            if step % self.cfg.eval_every == 0 || step == self.cfg.steps {
                let eval = self.evaluate(corpus)?;
                if !eval.total_loss.is_finite() {
                    return Err(self.abort(step, MocError::numeric("eval_loss", "non-finite held-out loss")));
                }
                on_row(&eval)?;
                self.last_good = self.checkpoint();
            }
            if self.cfg.checkpoint_every > 0 && step % self.cfg.checkpoint_every == 0 {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self, corpus: &TokenCorpus) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        self.run_with(
            corpus,
            |r| {
                rows.push(r.clone());
                Ok(())
            },
            |_| Ok(()),
        )?;
        Ok(rows)
    }
}

pub struct TrainResult<F: Float> {
    pub model: Model<F>,
    pub metrics: Vec<MetricsRow>,
    pub checkpoint: Checkpoint<F>,
    pub optimizer_state_elements: usize,
}

pub fn train<F: Float>(model: Model<F>, corpus: &TokenCorpus, cfg: TrainConfig) -> Result<TrainResult<F>> {
    let mut trainer = Trainer::new(model, cfg)?;
    let metrics = trainer.run(corpus)?;
    Ok(TrainResult {
        checkpoint: trainer.checkpoint(),
        optimizer_state_elements: trainer.opt.state_elements(),
        model: trainer.model,
        metrics,
    })
}

/// Model weights from `ckpt` with `max_seq_len` raised to fit `seq_len`.
/// When `expected` is given, every field except `max_seq_len` must match.
pub fn load_for_continuation<F: Float>(
    ckpt: &Checkpoint<F>,
    expected: Option<&ModelConfig>,
    seq_len: usize,
) -> Result<Model<F>> {
    let mut cfg = ckpt.model_config.clone();
    if let Some(expected) = expected {
        let aligned = ModelConfig { max_seq_len: cfg.max_seq_len, ..expected.clone() };
        check_config(&aligned, &cfg)?;
    }
    cfg.max_seq_len = cfg.max_seq_len.max(seq_len);
    let model = ckpt.to_model(None)?;
    Model::from_store(cfg, model.store)
}

/// Second-phase training from a checkpoint with a fresh optimizer and step
/// counter.
pub fn continue_train<F: Float>(
    ckpt: &Checkpoint<F>,
    expected: Option<&ModelConfig>,
    corpus: &TokenCorpus,
    cfg: TrainConfig,
) -> Result<TrainResult<F>> {
    let model = load_for_continuation(ckpt, expected, cfg.seq_len)?;
    train(model, corpus, cfg)
}
