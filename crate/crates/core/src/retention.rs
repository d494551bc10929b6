//! Synthetic two-phase forgetting harness.
//!
//! Phase A trains on rendered key/value facts. Phase B trains on an
//! instruction-style sequence reversal task with twice the context length.
//! Fact recall is measured before and after phase B for each model variant.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{Float, RngState};
use crate::training::{train, BankMode, TokenCorpus, TrainConfig};

pub const FACT: usize = 0;
pub const IS: usize = 1;
pub const END: usize = 2;
pub const INST: usize = 3;
pub const ANS: usize = 4;
pub const EOS: usize = 5;
pub const N_SPECIAL: usize = 6;

pub const FACT_MARKERS: [usize; 3] = [FACT, IS, END];
pub const INST_MARKERS: [usize; 3] = [INST, ANS, EOS];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactSpec {
    pub n_facts: usize,
    pub key_len: usize,
    pub value_len: usize,
    pub key_alphabet: usize,
    pub value_alphabet: usize,
    /// Times each fact appears in the training stream.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for FactSpec {
    fn default() -> Self {
        FactSpec { n_facts: 32, key_len: 2, value_len: 3, key_alphabet: 32, value_alphabet: 16, repeats: 200, seed: 11 }
    }
}

/// Phase-B task: a pool of distinct reversal instructions, each repeated
/// `repeats` times in shuffled order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionSpec {
    pub n_examples: usize,
    pub repeats: usize,
    pub seq_items: usize,
    pub alphabet: usize,
    pub seed: u64,
}

impl Default for InstructionSpec {
    fn default() -> Self {
        InstructionSpec { n_examples: 16, repeats: 200, seq_items: 3, alphabet: 16, seed: 12 }
    }
}

/// Token id ranges. Keys follow the special tokens and values follow the
/// keys. Instruction items reuse the fact content tokens starting at
/// `item_base`; only the template markers differ between the two corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub key_base: usize,
    pub value_base: usize,
    pub item_base: usize,
    pub end: usize,
}

pub fn token_layout(facts: &FactSpec, inst: &InstructionSpec, vocab: usize) -> Result<Layout> {
    let key_base = N_SPECIAL;
    let value_base = key_base + facts.key_alphabet;
    let end = value_base + facts.value_alphabet;
    if end > vocab {
        return Err(MocError::config(format!(
            "retention alphabets need {end} token ids but the vocabulary has {vocab}"
        )));
    }
    if inst.alphabet > facts.key_alphabet + facts.value_alphabet {
        return Err(MocError::config(format!(
            "instruction alphabet {} exceeds the {} fact content tokens",
            inst.alphabet,
            facts.key_alphabet + facts.value_alphabet
        )));
    }
    Ok(Layout { key_base, value_base, item_base: key_base, end })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fact {
    pub key: Vec<usize>,
    pub value: Vec<usize>,
}

pub fn render_fact(f: &Fact) -> Vec<usize> {
    let mut out = vec![FACT];
    out.extend(&f.key);
    out.push(IS);
    out.extend(&f.value);
    out.push(END);
    out
}

/// Inverse of [`render_fact`].
pub fn parse_fact(tokens: &[usize], key_len: usize, value_len: usize) -> Option<Fact> {
    if tokens.len() != key_len + value_len + 3
        || tokens[0] != FACT
        || tokens[key_len + 1] != IS
        || tokens[tokens.len() - 1] != END
    {
        return None;
    }
    Some(Fact { key: tokens[1..=key_len].to_vec(), value: tokens[key_len + 2..tokens.len() - 1].to_vec() })
}

/// A prompt and the tokens a model should continue it with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Probe {
    pub prompt: Vec<usize>,
    pub expected: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactCorpus {
    pub facts: Vec<Fact>,
    pub corpus: TokenCorpus,
    pub probes: Vec<Probe>,
}

fn shuffled_stream(facts: &[Fact], repeats: usize, rng: RngState) -> Vec<usize> {
    let mut r = rng.rng();
    let mut order: Vec<usize> = (0..facts.len()).collect();
    let mut out = Vec::new();
    for _ in 0..repeats {
        order.shuffle(&mut r);
        for &i in &order {
            out.extend(render_fact(&facts[i]));
        }
    }
    out
}

pub fn gen_fact_corpus(spec: &FactSpec, layout: &Layout) -> Result<FactCorpus> {
    if spec.n_facts == 0 || spec.key_len == 0 || spec.value_len == 0 || spec.repeats == 0 {
        return Err(MocError::config("fact spec needs n_facts, key_len, value_len and repeats >= 1"));
    }
    let key_space = (spec.key_alphabet as u128).checked_pow(spec.key_len as u32).unwrap_or(u128::MAX);
    if spec.n_facts as u128 > key_space {
        return Err(MocError::config(format!(
            "{} facts need unique keys but only {key_space} exist",
            spec.n_facts
        )));
    }
    let root = RngState::new(spec.seed);
    let mut rng = root.named("facts/table").rng();
    let mut seen = HashSet::new();
    let mut facts = Vec::with_capacity(spec.n_facts);
    while facts.len() < spec.n_facts {
        let key: Vec<usize> = (0..spec.key_len).map(|_| layout.key_base + rng.gen_range(0..spec.key_alphabet)).collect();
        if !seen.insert(key.clone()) {
            continue;
        }
        let value = (0..spec.value_len).map(|_| layout.value_base + rng.gen_range(0..spec.value_alphabet)).collect();
        facts.push(Fact { key, value });
    }
    let train = shuffled_stream(&facts, spec.repeats, root.named("facts/train"));
    let eval = shuffled_stream(&facts, 4, root.named("facts/eval"));
    let probes = facts
        .iter()
        .map(|f| {
            let mut prompt = vec![FACT];
            prompt.extend(&f.key);
            prompt.push(IS);
            Probe { prompt, expected: f.value.clone() }
        })
        .collect();
    Ok(FactCorpus { facts, corpus: TokenCorpus::new(train, eval), probes })
}

fn render_instruction(items: &[usize]) -> Vec<usize> {
    let mut out = vec![INST];
    out.extend(items);
    out.push(ANS);
    out.extend(items.iter().rev());
    out.push(EOS);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstructionCorpus {
    pub corpus: TokenCorpus,
    pub probes: Vec<Probe>,
}

/// Sequence reversal: `INST a.. ANS reversed(a..) EOS`. Probes cover the
/// whole pool.
pub fn gen_instruction_corpus(spec: &InstructionSpec, layout: &Layout) -> Result<InstructionCorpus> {
    if spec.n_examples == 0 || spec.seq_items == 0 || spec.alphabet == 0 || spec.repeats == 0 {
        return Err(MocError::config("instruction spec needs n_examples, repeats, seq_items and alphabet >= 1"));
    }
    let space = (spec.alphabet as u128).checked_pow(spec.seq_items as u32).unwrap_or(u128::MAX);
    if spec.n_examples as u128 > space {
        return Err(MocError::config(format!("{} distinct instructions requested but only {space} exist", spec.n_examples)));
    }
    let root = RngState::new(spec.seed);
    let mut rng = root.named("instructions/pool").rng();
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(spec.n_examples);
    while pool.len() < spec.n_examples {
        let items: Vec<usize> = (0..spec.seq_items).map(|_| layout.item_base + rng.gen_range(0..spec.alphabet)).collect();
        if seen.insert(items.clone()) {
            pool.push(items);
        }
    }
    let stream = |repeats: usize, label: &str| {
        let mut r = root.named(label).rng();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut out = Vec::new();
        for _ in 0..repeats {
            order.shuffle(&mut r);
            for &i in &order {
                out.extend(render_instruction(&pool[i]));
            }
        }
        out
    };
    let train = stream(spec.repeats, "instructions/train");
    let eval = stream(4, "instructions/eval");
    let probes = pool
        .iter()
        .map(|items| {
            let mut prompt = vec![INST];
            prompt.extend(items);
            prompt.push(ANS);
            Probe { prompt, expected: items.iter().rev().copied().collect() }
        })
        .collect();
    Ok(InstructionCorpus { corpus: TokenCorpus::new(train, eval), probes })
}

/// Checks that neither corpus uses the other's template markers.
pub fn check_marker_disjoint(facts: &TokenCorpus, inst: &TokenCorpus) -> Result<()> {
    let leak = |c: &TokenCorpus, markers: &[usize]| c.train.iter().chain(&c.eval).any(|t| markers.contains(t));
    if leak(facts, &INST_MARKERS) || leak(inst, &FACT_MARKERS) {
        return Err(MocError::config("fact and instruction corpora share template markers"));
    }
    Ok(())
}

/// Exact-match accuracy of greedy continuations. Probes are evaluated in
/// groups of equal prompt length, so the result does not depend on order.
pub fn eval_exact_match<F: Float>(model: &Model<F>, probes: &[Probe]) -> Result<f64> {
    if probes.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in probes.chunks(64) {
        let mut by_len: std::collections::BTreeMap<(usize, usize), Vec<&Probe>> = Default::default();
        for p in chunk {
            by_len.entry((p.prompt.len(), p.expected.len())).or_default().push(p);
        }
        for ((_, n_new), group) in by_len {
            let prompts: Vec<Vec<usize>> = group.iter().map(|p| p.prompt.clone()).collect();
            let out = model.greedy_generate(&prompts, n_new)?;
            correct += out.iter().zip(&group).filter(|(o, p)| **o == p.expected).count();
        }
    }
    Ok(correct as f64 / probes.len() as f64)
}

pub fn eval_fact_recall<F: Float>(model: &Model<F>, probes: &[Probe]) -> Result<f64> {
    eval_exact_match(model, probes)
}

/// Mean next-token loss over fixed held-out windows.
pub fn eval_lm_loss<F: Float>(model: &Model<F>, corpus: &TokenCorpus, n_batches: usize, batch: usize, seq_len: usize) -> Result<f64> {
    let batches = corpus.eval_batches(n_batches, batch, seq_len)?;
    let mut total = 0.0;
    for b in &batches {
        total += model.forward(b, Some(b))?.lm_loss;
    }
    Ok(total / batches.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The backbone with memory removed.
    VanillaLike,
    /// Memory model, bank trained in phase B per the phase-B bank mode.
    Moc,
    /// Memory model, bank frozen in phase B.
    MocFrozenBank,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::VanillaLike, Variant::Moc, Variant::MocFrozenBank];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::VanillaLike => "vanilla-like",
            Variant::Moc => "moc",
            Variant::MocFrozenBank => "moc-frozen-bank",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| MocError::config(format!("unknown variant `{s}`")))
    }

    pub fn model_config(self, base: &ModelConfig) -> ModelConfig {
        match self {
            Variant::VanillaLike => base.without_memory(),
            _ => base.clone(),
        }
    }

    pub fn phase_b_bank_mode(self, configured: BankMode) -> BankMode {
        match self {
            Variant::MocFrozenBank => BankMode::Frozen,
            _ => configured,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionConfig {
    pub facts: FactSpec,
    pub instructions: InstructionSpec,
    /// Phase-B training; its `seq_len` is replaced by
    /// `context_multiplier × phase-A seq_len`.
    pub phase_b: TrainConfig,
    pub context_multiplier: usize,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl RetentionConfig {
    /// Phase-A training settings sized for the fact corpus.
    pub fn micro_phase_a() -> TrainConfig {
        TrainConfig {
            steps: 150,
            seq_len: 32,
            eval_every: 50,
            schedule: crate::training::Schedule::Wsd { warmup: 15, decay_start: 120, min_ratio: 0.1 },
            ..TrainConfig::micro()
        }
    }

    pub fn micro() -> Self {
        let a = Self::micro_phase_a();
        RetentionConfig {
            facts: FactSpec::default(),
            instructions: InstructionSpec::default(),
            phase_b: TrainConfig {
                steps: 150,
                eval_every: 50,
                schedule: crate::training::Schedule::Cosine { warmup: 10 },
                lr: a.lr.scaled(0.5),
                bank_mode: BankMode::LowLr,
                ..a
            },
            context_multiplier: 2,
            variants: Variant::ALL.to_vec(),
            seeds: vec![7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub fact_recall_a: f64,
    pub fact_recall_b: f64,
    pub task_accuracy_a: f64,
    pub task_accuracy_b: f64,
    pub eval_loss_a: f64,
    pub eval_loss_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VariantOutcome {
    Completed(VariantMetrics),
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub outcome: VariantOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    /// The seed, or `None` for a mean over seeds.
    pub seed: Option<u64>,
    pub variants: Vec<VariantReport>,
}

pub const METRICS: [&str; 3] = ["fact_recall", "task_accuracy", "phase_a_eval_loss"];

impl VariantMetrics {
    /// `(metric, phase A, phase B)`, in [`METRICS`] order.
    pub fn rows(&self) -> [(&'static str, f64, f64); 3] {
        [
            ("fact_recall", self.fact_recall_a, self.fact_recall_b),
            ("task_accuracy", self.task_accuracy_a, self.task_accuracy_b),
            ("phase_a_eval_loss", self.eval_loss_a, self.eval_loss_b),
        ]
    }

    pub fn fact_recall_delta(&self) -> f64 {
        self.fact_recall_b - self.fact_recall_a
    }
}

impl RetentionReport {
    pub fn get(&self, v: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variant", "metric", "phaseA", "phaseB", "delta"])?;
        for r in &self.variants {
            match &r.outcome {
                VariantOutcome::Completed(m) => {
                    for (name, a, b) in m.rows() {
                        w.write_record([r.variant.as_str(), name, &a.to_string(), &b.to_string(), &(b - a).to_string()])?;
                    }
                }
                VariantOutcome::Failed { reason } => {
                    w.write_record([r.variant.as_str(), "failed", reason.as_str(), "", ""])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses [`RetentionReport::write_csv`] output, checking every delta
    /// against its phase values.
    pub fn read_csv<R: Read>(input: R, seed: Option<u64>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let bad = |m: String| MocError::config(format!("retention csv: {m}"));
        let mut variants: Vec<VariantReport> = Vec::new();
        let mut pending: Vec<(Variant, Vec<(String, f64, f64)>)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(bad(format!("expected 5 columns, found {}", rec.len())));
            }
            let variant = Variant::parse(&rec[0])?;
            if &rec[1] == "failed" {
                variants.push(VariantReport { variant, outcome: VariantOutcome::Failed { reason: rec[2].to_string() } });
                continue;
            }
            let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("`{}`: {e}", &rec[i])));
            let (a, b, d) = (num(2)?, num(3)?, num(4)?);
            if d != b - a && !(d.is_nan() && (b - a).is_nan()) {
                return Err(bad(format!("{variant} {}: delta {d} != {b} - {a}", &rec[1])));
            }
            match pending.iter_mut().find(|(v, _)| *v == variant) {
                Some((_, rows)) => rows.push((rec[1].to_string(), a, b)),
                None => pending.push((variant, vec![(rec[1].to_string(), a, b)])),
            }
            let (_, rows) = pending.iter().find(|(v, _)| *v == variant).expect("just inserted");
            if rows.len() == METRICS.len() {
                let get = |name: &str| -> Result<(f64, f64)> {
                    rows.iter()
                        .find(|(n, _, _)| n == name)
                        .map(|(_, a, b)| (*a, *b))
                        .ok_or_else(|| bad(format!("{variant}: missing metric {name}")))
                };
                let (fa, fb) = get("fact_recall")?;
                let (ta, tb) = get("task_accuracy")?;
                let (la, lb) = get("phase_a_eval_loss")?;
                variants.push(VariantReport {
                    variant,
                    outcome: VariantOutcome::Completed(VariantMetrics {
                        fact_recall_a: fa,
                        fact_recall_b: fb,
                        task_accuracy_a: ta,
                        task_accuracy_b: tb,
                        eval_loss_a: la,
                        eval_loss_b: lb,
                    }),
                });
                pending.retain(|(v, _)| *v != variant);
            }
        }
        if let Some((v, _)) = pending.first() {
            return Err(bad(format!("{v}: incomplete metric rows")));
        }
        Ok(RetentionReport { seed, variants })
    }

    /// Human-readable summary with the sign of each fact-recall delta.
    pub fn summary(&self) -> String {
        let mut s = match self.seed {
            Some(seed) => format!("retention report (seed {seed})\n"),
            None => "retention report (mean over seeds)\n".to_string(),
        };
        for r in &self.variants {
            match &r.outcome {
                VariantOutcome::Completed(m) => {
                    s.push_str(&format!("{}:\n", r.variant));
                    for (name, a, b) in m.rows() {
                        s.push_str(&format!("  {name}: {a:.4} -> {b:.4} (delta {:+.4})\n", b - a));
                    }
                    let d = m.fact_recall_delta();
                    let word = if d < 0.0 { "forgot" } else if d > 0.0 { "gained" } else { "unchanged" };
                    s.push_str(&format!("  fact recall {word}\n"));
                }
                VariantOutcome::Failed { reason } => s.push_str(&format!("{}: FAILED: {reason}\n", r.variant)),
            }
        }
        s
    }

    /// Metric-wise mean over the completed runs of each variant.
    pub fn mean(reports: &[RetentionReport]) -> RetentionReport {
        let mut variants = Vec::new();
        let mut order: Vec<Variant> = Vec::new();
        for r in reports.iter().flat_map(|r| &r.variants) {
            if !order.contains(&r.variant) {
                order.push(r.variant);
            }
        }
        for v in order {
            let done: Vec<&VariantMetrics> = reports
                .iter()
                .filter_map(|r| r.get(v))
                .filter_map(|r| match &r.outcome {
                    VariantOutcome::Completed(m) => Some(m),
                    VariantOutcome::Failed { .. } => None,
                })
                .collect();
            let outcome = if done.is_empty() {
                VariantOutcome::Failed { reason: "no completed seeds".into() }
            } else {
                let n = done.len() as f64;
                let avg = |f: fn(&VariantMetrics) -> f64| done.iter().map(|m| f(m)).sum::<f64>() / n;
                VariantOutcome::Completed(VariantMetrics {
                    fact_recall_a: avg(|m| m.fact_recall_a),
                    fact_recall_b: avg(|m| m.fact_recall_b),
                    task_accuracy_a: avg(|m| m.task_accuracy_a),
                    task_accuracy_b: avg(|m| m.task_accuracy_b),
                    eval_loss_a: avg(|m| m.eval_loss_a),
                    eval_loss_b: avg(|m| m.eval_loss_b),
                })
            };
            variants.push(VariantReport { variant: v, outcome });
        }
        RetentionReport { seed: None, variants }
    }
}

/// Generated data shared by every variant of a protocol run.
pub struct RetentionData {
    pub facts: FactCorpus,
    pub instructions: InstructionCorpus,
}

impl RetentionData {
    pub fn generate(rc: &RetentionConfig, vocab: usize) -> Result<Self> {
        let layout = token_layout(&rc.facts, &rc.instructions, vocab)?;
        let facts = gen_fact_corpus(&rc.facts, &layout)?;
        let instructions = gen_instruction_corpus(&rc.instructions, &layout)?;
        check_marker_disjoint(&facts.corpus, &instructions.corpus)?;
        Ok(RetentionData { facts, instructions })
    }
}

fn run_variant(
    variant: Variant,
    model_cfg: &ModelConfig,
    phase_a: &TrainConfig,
    rc: &RetentionConfig,
    data: &RetentionData,
    seed: u64,
) -> Result<VariantMetrics> {
    let cfg = variant.model_config(model_cfg);
    let seq_b = phase_a.seq_len * rc.context_multiplier;
    let cfg = ModelConfig { max_seq_len: cfg.max_seq_len.max(seq_b), ..cfg };
    let model: Model<f32> = Model::build(&cfg, RngState::new(seed).named("retention/init"))?;
    let a_cfg = TrainConfig { seed, ..phase_a.clone() };
    let trained = train(model, &data.facts.corpus, a_cfg)?;
    let model = trained.model;
    let eval_loss = |m: &Model<f32>| {
        eval_lm_loss(m, &data.facts.corpus, phase_a.eval_batches, phase_a.batch_size, phase_a.seq_len)
    };
    let fact_recall_a = eval_fact_recall(&model, &data.facts.probes)?;
    let task_accuracy_a = eval_exact_match(&model, &data.instructions.probes)?;
    let eval_loss_a = eval_loss(&model)?;

    let model = if rc.phase_b.steps == 0 {
        model
    } else {
        let b_cfg = TrainConfig {
            seq_len: seq_b,
            seed: seed.wrapping_add(1),
            bank_mode: variant.phase_b_bank_mode(rc.phase_b.bank_mode),
            ..rc.phase_b.clone()
        };
        let frozen = b_cfg.bank_mode == BankMode::Frozen;
        let bank_before = model.bank_tensor().cloned();
        let out = train(model, &data.instructions.corpus, b_cfg)?;
        if frozen && out.model.bank_tensor().cloned() != bank_before {
            return Err(MocError::numeric("bank", "frozen bank changed during phase B"));
        }
        out.model
    };
    Ok(VariantMetrics {
        fact_recall_a,
        fact_recall_b: eval_fact_recall(&model, &data.facts.probes)?,
        task_accuracy_a,
        task_accuracy_b: eval_exact_match(&model, &data.instructions.probes)?,
        eval_loss_a,
        eval_loss_b: eval_loss(&model)?,
    })
}

/// Runs both phases for every configured variant with one seed. A failing
/// variant is reported as failed; the others still run.
pub fn run_retention_protocol(
    model_cfg: &ModelConfig,
    phase_a: &TrainConfig,
    rc: &RetentionConfig,
    seed: u64,
) -> Result<RetentionReport> {
    if rc.context_multiplier == 0 {
        return Err(MocError::config("context_multiplier must be >= 1"));
    }
    if rc.variants.is_empty() {
        return Err(MocError::config("no retention variants configured"));
    }
    let data = RetentionData::generate(rc, model_cfg.vocab)?;
    let variants = rc
        .variants
        .iter()
        .map(|&variant| {
            let outcome = match run_variant(variant, model_cfg, phase_a, rc, &data, seed) {
                Ok(m) => VariantOutcome::Completed(m),
                Err(e) => VariantOutcome::Failed { reason: e.to_string() },
            };
            VariantReport { variant, outcome }
        })
        .collect();
    Ok(RetentionReport { seed: Some(seed), variants })
}

/// One report per seed in `rc.seeds` followed by their mean.
pub fn run_retention_seeds(
    model_cfg: &ModelConfig,
    phase_a: &TrainConfig,
    rc: &RetentionConfig,
) -> Result<(Vec<RetentionReport>, RetentionReport)> {
    let reports = rc
        .seeds
        .iter()
        .map(|&s| run_retention_protocol(model_cfg, phase_a, rc, s))
        .collect::<Result<Vec<_>>>()?;
    let mean = RetentionReport::mean(&reports);
    Ok((reports, mean))
}
