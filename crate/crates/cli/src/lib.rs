//! Library side of the `moc` binary: run configuration files, route
//! statistics and the subcommand implementations. Every command writes its
//! report to the given writer so it can be driven from tests.

pub mod config;
pub mod stats;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use moc_core::flops::flops_model;
use moc_core::model::Model;
use moc_core::numerics::{Float, Tensor};
use moc_core::retention::{eval_lm_loss, run_retention_seeds};
use moc_core::training::{
    load_for_continuation, BankMode, Checkpoint, MetricsWriter, Schedule, TokenCorpus, TrainConfig, Trainer,
};
use moc_core::MocError;
use sha2::{Digest, Sha256};

pub use config::{RetentionSection, RunConfig};
pub use stats::{route_stats, write_route_csv, LayerRouteStats};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

#[derive(Parser, Debug)]
#[command(name = "moc", version, about = "Mixture-of-Chapters transformer: training, FLOPs and routing analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analytic forward FLOPs breakdown.
    Flops(FlopsArgs),
    /// Train from scratch on the synthetic corpus.
    Train(TrainArgs),
    /// Continue training from a checkpoint with a fresh optimizer.
    Continue(ContinueArgs),
    /// Held-out LM loss of a checkpoint.
    Eval(EvalArgs),
    /// Chapter selection statistics of a checkpoint.
    RouteStats(RouteStatsArgs),
    /// Two-phase forgetting protocol over all variants.
    Retention(RetentionArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run config; may name a `preset` and override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of moc-paper, vanilla-backbone, vanilla-iso, micro.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
}

impl ConfigArgs {
    pub fn given(&self) -> bool {
        self.config.is_some() || self.preset.is_some()
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), self.preset.as_deref())
    }
}

#[derive(Args, Debug, Clone)]
pub struct FlopsArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 1024)]
    pub seqlen: usize,
    /// Replace the router auxiliary-loss estimate with this count.
    #[arg(long)]
    pub aux_override: Option<u128>,
    /// Also write the breakdown as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankModeArg {
    Frozen,
    LowLr,
    EqualLr,
    Custom,
}

impl From<BankModeArg> for BankMode {
    fn from(m: BankModeArg) -> Self {
        match m {
            BankModeArg::Frozen => BankMode::Frozen,
            BankModeArg::LowLr => BankMode::LowLr,
            BankModeArg::EqualLr => BankMode::EqualLr,
            BankModeArg::Custom => BankMode::Custom,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ContinueArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// When given, the checkpoint's model must match `[model]` and `[train]` is used.
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub bank_mode: Option<BankModeArg>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 4)]
    pub batches: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long)]
    pub seq_len: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct RouteStatsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Supplies the `[data]` section of the sampled corpus.
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 4)]
    pub batches: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Comma-separated memory layer indices.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RetentionArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated seeds; overrides `retention.seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub phase_b_steps: Option<u64>,
}

/// 1 for numeric aborts, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numeric = err.chain().any(|e| {
        e.downcast_ref::<MocError>()
            .is_some_and(|m| m.is_numeric() || matches!(m, MocError::TrainAbort { .. }))
    });
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for e in err.chain() {
        if let Some(m) = e.downcast_ref::<MocError>() {
            return match m {
                MocError::TrainAbort { .. } | MocError::Numeric { .. } => "numeric",
                MocError::Config(_) | MocError::ConfigMismatch(_) | MocError::Range(_) => "config",
                MocError::Checkpoint(_) => "checkpoint",
                MocError::Io(_) => "io",
                _ => "input",
            };
        }
        if e.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "config"
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Flops(a) => cmd_flops(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Continue(a) => cmd_continue(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::RouteStats(a) => cmd_route_stats(&a, out),
        Command::Retention(a) => cmd_retention(&a, out),
    }
}

/// Hex SHA-256 of the little-endian bank values, or `none`.
pub fn bank_hash<F: Float>(bank: Option<&Tensor<F>>) -> String {
    let Some(t) = bank else { return "none".into() };
    let mut bytes = Vec::with_capacity(t.numel() * 8);
    for &v in t.data() {
        v.write_le(&mut bytes);
    }
    hex::encode(Sha256::digest(&bytes))
}

pub fn checkpoint_bank_hash<F: Float>(ckpt: &Checkpoint<F>) -> String {
    bank_hash(ckpt.tensor("bank"))
}

pub fn render_flops(items: &[(String, u128)]) -> String {
    let width = items.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    items.iter().map(|(n, v)| format!("{n:<width$} {v}\n")).collect()
}

pub fn cmd_flops(a: &FlopsArgs, out: &mut dyn Write) -> Result<()> {
    let run = a.cfg.resolve()?;
    let report = flops_model(&run.model, a.batch, a.seqlen, a.aux_override)?;
    report.verify()?;
    out.write_all(render_flops(&report.line_items()).as_bytes())?;
    if let Some(path) = &a.csv {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        report.write_csv(BufWriter::new(f))?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>> {
    if !path.exists() {
        bail!(MocError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint {} does not exist", path.display())
        )));
    }
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn prepare_out_dir(dir: &Path, run: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    std::fs::write(dir.join(RESOLVED_CONFIG), run.to_toml_string()?)?;
    Ok(())
}

/// Runs `trainer` to completion, streaming metrics and periodic checkpoints
/// into `dir`. On an abort the last good checkpoint is written before the
/// error is returned.
fn drive(mut trainer: Trainer<f32>, corpus: &TokenCorpus, dir: &Path, out: &mut dyn Write) -> Result<Checkpoint<f32>> {
    let mut metrics = MetricsWriter::new(File::create(dir.join(METRICS_FILE))?);
    let mut last_eval = None;
    let res = trainer.run_with(
        corpus,
        |row| {
            if row.split == "eval" {
                last_eval = Some(row.lm_loss);
            }
            metrics.write(row)
        },
        |ck| ck.save(dir.join(format!("step_{:06}.ckpt", ck.step))),
    );
    if let Err(e) = res {
        trainer.last_good().save(dir.join(LAST_GOOD_CHECKPOINT))?;
        return Err(e).context(format!("training aborted; last good checkpoint in {}", dir.display()));
    }
    let ckpt = trainer.checkpoint();
    ckpt.save(dir.join(FINAL_CHECKPOINT))?;
    writeln!(out, "steps {}", ckpt.step)?;
    if let Some(l) = last_eval {
        writeln!(out, "final_eval_lm_loss {l}")?;
    }
    writeln!(out, "bank_sha256 {}", checkpoint_bank_hash(&ckpt))?;
    writeln!(out, "checkpoint {}", dir.join(FINAL_CHECKPOINT).display())?;
    Ok(ckpt)
}

/// Sets the step count, moving the schedule breakpoints in proportion so a
/// shortened run keeps the same warmup/decay shape.
pub fn override_steps(t: &mut TrainConfig, steps: Option<u64>) {
    let Some(steps) = steps else { return };
    if steps == t.steps || t.steps == 0 {
        t.steps = steps;
        return;
    }
    let scale = |x: u64| ((x as u128 * steps as u128) / t.steps as u128) as u64;
    t.schedule = match t.schedule {
        Schedule::Wsd { warmup, decay_start, min_ratio } => {
            let decay_start = scale(decay_start).min(steps.saturating_sub(1));
            Schedule::Wsd { warmup: scale(warmup).min(decay_start), decay_start, min_ratio }
        }
        Schedule::Cosine { warmup } => Schedule::Cosine { warmup: scale(warmup).min(steps) },
    };
    t.steps = steps;
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut run = a.cfg.resolve()?;
    let t = &mut run.train;
    override_steps(t, a.steps);
    t.seed = a.seed.unwrap_or(t.seed);
    t.seq_len = a.seq_len.unwrap_or(t.seq_len);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    run.validate()?;
    prepare_out_dir(&a.out_dir, &run)?;
    let corpus = TokenCorpus::markov(run.model.vocab, &run.data)?;
    let model: Model<f32> = Model::build(&run.model, moc_core::numerics::RngState::new(run.train.seed).named("init"))?;
    drive(Trainer::new(model, run.train.clone())?, &corpus, &a.out_dir, out)?;
    Ok(())
}

pub fn cmd_continue(a: &ContinueArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (mut run, expected) = if a.cfg.given() {
        let run = a.cfg.resolve()?;
        let expected = run.model.clone();
        (run, Some(expected))
    } else {
        let mut run = RunConfig::preset("micro")?;
        run.model = ckpt.model_config.clone();
        run.train = ckpt.train_config.clone().unwrap_or_else(TrainConfig::micro_ift);
        (run, None)
    };
    let t = &mut run.train;
    t.bank_mode = a.bank_mode.map(BankMode::from).unwrap_or(t.bank_mode);
    override_steps(t, a.steps);
    t.seed = a.seed.unwrap_or(t.seed);
    t.seq_len = a.seq_len.unwrap_or(t.seq_len);
    let model = load_for_continuation(&ckpt, expected.as_ref(), run.train.seq_len)?;
    run.model = model.config().clone();
    run.validate()?;
    prepare_out_dir(&a.out_dir, &run)?;
    writeln!(out, "initial_bank_sha256 {}", checkpoint_bank_hash(&ckpt))?;
    let corpus = TokenCorpus::markov(run.model.vocab, &run.data)?;
    drive(Trainer::new(model, run.train.clone())?, &corpus, &a.out_dir, out)?;
    Ok(())
}

fn data_for(cfg: &ConfigArgs, ckpt: &Checkpoint<f32>) -> Result<TokenCorpus> {
    let data = if cfg.given() { cfg.resolve()?.data } else { Default::default() };
    Ok(TokenCorpus::markov(ckpt.model_config.vocab, &data)?)
}

fn sample_seq_len(requested: Option<usize>, ckpt: &Checkpoint<f32>) -> usize {
    let trained = ckpt.train_config.as_ref().map_or(64, |t| t.seq_len);
    requested.unwrap_or(trained.min(ckpt.model_config.max_seq_len))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let corpus = data_for(&a.cfg, &ckpt)?;
    let model = ckpt.to_model(None)?;
    let seq_len = sample_seq_len(a.seq_len, &ckpt);
    let loss = eval_lm_loss(&model, &corpus, a.batches, a.batch_size, seq_len)?;
    writeln!(out, "eval_lm_loss {loss}")?;
    Ok(())
}

pub fn cmd_route_stats(a: &RouteStatsArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let corpus = data_for(&a.cfg, &ckpt)?;
    let model = ckpt.to_model(None)?;
    let batches = corpus.eval_batches(a.batches, a.batch_size, sample_seq_len(a.seq_len, &ckpt))?;
    let stats = route_stats(&model, &batches, a.layers.as_deref())?;
    out.write_all(stats::render_route_stats(&stats).as_bytes())?;
    if let Some(path) = &a.csv {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_route_csv(&stats, BufWriter::new(f))?;
    }
    Ok(())
}

pub fn cmd_retention(a: &RetentionArgs, out: &mut dyn Write) -> Result<()> {
    let mut run = a.cfg.resolve()?;
    if let Some(seeds) = &a.seeds {
        run.retention.seeds = seeds.clone();
    }
    if let Some(steps) = a.phase_b_steps {
        run.retention.phase_b.steps = steps;
    }
    if run.retention.seeds.is_empty() {
        bail!(MocError::config("retention needs at least one seed"));
    }
    run.validate()?;
    prepare_out_dir(&a.out_dir, &run)?;
    let (reports, mean) = run_retention_seeds(&run.model, &run.retention.phase_a, &run.retention.protocol())?;
    let mut summary = String::new();
    for r in &reports {
        let seed = r.seed.expect("per-seed report");
        r.write_csv(BufWriter::new(File::create(a.out_dir.join(format!("retention_seed{seed}.csv")))?))?;
        summary.push_str(&r.summary());
        summary.push('\n');
    }
    mean.write_csv(BufWriter::new(File::create(a.out_dir.join("retention_mean.csv"))?))?;
    summary.push_str(&mean.summary());
    std::fs::write(a.out_dir.join("summary.txt"), &summary)?;
    out.write_all(summary.as_bytes())?;
    Ok(())
}
