use std::path::Path;
use std::process::{Command, Output};

use moc_cli::stats::{entropy, route_stats, write_route_csv};
use moc_cli::{bank_hash, override_steps, render_flops, RunConfig};
use moc_core::flops::flops_model;
use moc_core::model::{Model, ModelConfig};
use moc_core::numerics::{RngState, Tensor};
use moc_core::retention::{RetentionReport, Variant, VariantOutcome};
use moc_core::training::{write_metrics_csv, Checkpoint, TokenCorpus, Trainer};

fn moc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = moc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn parse_items(text: &str) -> Vec<(String, u128)> {
    text.lines()
        .map(|l| {
            let mut it = l.split_whitespace();
            (it.next().unwrap().to_string(), it.next().unwrap().parse().unwrap())
        })
        .collect()
}

#[test]
fn flops_reference_totals() {
    let out = ok(&["flops", "--preset", "moc-paper", "--batch", "1", "--seqlen", "1024", "--aux-override", "331859"]);
    let items = parse_items(&out);
    let get = |n: &str| items.iter().find(|(k, _)| k == n).unwrap().1;
    assert_eq!(get("forward"), 459_171_802_488);
    assert_eq!(get("fwd_bwd"), 3 * 459_171_802_488);
    let out = ok(&["flops", "--preset", "vanilla-backbone"]);
    assert_eq!(parse_items(&out).iter().find(|(k, _)| k == "forward").unwrap().1, 356_363_685_888);
}

#[test]
fn flops_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    let out = ok(&["flops", "--preset", "micro", "--seqlen", "8", "--csv", p(&csv)]);
    let report = flops_model(&ModelConfig::micro(), 1, 8, None).unwrap();
    assert_eq!(parse_items(&out), report.line_items());
    assert_eq!(out, render_flops(&report.line_items()));
    let mut expected = Vec::new();
    report.write_csv(&mut expected).unwrap();
    assert_eq!(std::fs::read(&csv).unwrap(), expected);
}

#[test]
fn train_is_deterministic_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["train", "--preset", "micro", "--steps", "12", "--seed", "7", "--out-dir", p(d)]);
    }
    let csv_a = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("final.ckpt")).unwrap(), std::fs::read(b.join("final.ckpt")).unwrap());

    // the same run through the library
    let mut run = RunConfig::preset("micro").unwrap();
    override_steps(&mut run.train, Some(12));
    run.train.seed = 7;
    let resolved = RunConfig::from_toml_str(&std::fs::read_to_string(a.join("config.resolved")).unwrap()).unwrap();
    assert_eq!(resolved, run);
    let corpus = TokenCorpus::markov(run.model.vocab, &run.data).unwrap();
    let model: Model<f32> = Model::build(&run.model, RngState::new(7).named("init")).unwrap();
    let rows = Trainer::new(model, run.train.clone()).unwrap().run(&corpus).unwrap();
    let mut expected = Vec::new();
    write_metrics_csv(&rows, &mut expected).unwrap();
    assert_eq!(csv_a, expected);
}

#[test]
fn steps_override_rescales_schedule() {
    let mut t = RunConfig::preset("micro").unwrap().train;
    override_steps(&mut t, Some(50));
    assert_eq!(t.steps, 50);
    t.validate().unwrap();
    assert_eq!(t.schedule, moc_core::training::Schedule::Wsd { warmup: 5, decay_start: 40, min_ratio: 0.1 });
}

#[test]
fn continue_with_frozen_bank_keeps_bank_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--preset", "micro", "--steps", "4", "--seq-len", "16", "--out-dir", p(&a)]);
    let out = ok(&[
        "continue", "--checkpoint", p(&a.join("final.ckpt")), "--bank-mode", "frozen", "--steps", "3",
        "--seq-len", "32", "--out-dir", p(&b),
    ]);
    let before: Checkpoint<f32> = Checkpoint::load(a.join("final.ckpt")).unwrap();
    let after: Checkpoint<f32> = Checkpoint::load(b.join("final.ckpt")).unwrap();
    assert_eq!(before.tensor("bank"), after.tensor("bank"));
    assert_ne!(before.tensor("embed"), after.tensor("embed"));
    let h = bank_hash(before.tensor("bank"));
    assert!(out.contains(&format!("initial_bank_sha256 {h}")));
    assert!(out.contains(&format!("\nbank_sha256 {h}")));
    assert!(after.moments.iter().all(|(n, _)| n != "bank"));
    let resolved = RunConfig::from_toml_str(&std::fs::read_to_string(b.join("config.resolved")).unwrap()).unwrap();
    assert_eq!(resolved.train.bank_mode, moc_core::training::BankMode::Frozen);
    assert_eq!(resolved.train.seq_len, 32);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = moc(&["continue", "--checkpoint", p(&dir.path().join("missing.ckpt")), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[io]:") && err.contains("missing.ckpt"), "{err}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "preset = \"micro\"\n[model]\nnot_a_field = 1\n").unwrap();
    let out = moc(&["flops", "--config", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = moc(&["eval", "--checkpoint", p(&garbage)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[checkpoint]"));

    assert_eq!(moc(&["train"]).status.code(), Some(2));
    assert_eq!(moc(&["flops", "--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn diverging_run_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    std::fs::write(
        &cfg,
        "preset = \"micro\"\n[train]\nsteps = 6\nseq_len = 16\nbatch_size = 2\n\
         [train.lr]\nbase = 1e30\nmemory_layers = 1e30\nmemory_bank = 1e30\n\
         [train.schedule]\nkind = \"cosine\"\nwarmup = 0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = moc(&["train", "--config", p(&cfg), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[numeric]"));
    assert!(out_dir.join("last_good.ckpt").exists());
}

fn zero_router_checkpoint(path: &Path) {
    let mut model: Model<f32> = Model::build(&ModelConfig::micro(), RngState::new(3)).unwrap();
    for p in model.store.iter_mut() {
        if p.name.contains("router") {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::zeros(&shape);
        }
    }
    Checkpoint::capture(&model, None, 0, RngState::new(0), None).save(path).unwrap();
}

#[test]
fn route_stats_zero_router_picks_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("z.ckpt");
    zero_router_checkpoint(&ckpt);
    let csv = dir.path().join("rs.csv");
    ok(&["route-stats", "--checkpoint", p(&ckpt), "--batches", "2", "--batch-size", "4", "--seq-len", "16", "--csv", p(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let cfg = ModelConfig::micro();
    for layer in &cfg.memory_layer_indices {
        for c in 1..cfg.chapters {
            let expected = if c <= cfg.top_k { 1.0 } else { 0.0 };
            let row = format!("{layer},frequency,{c},{expected}\n");
            assert!(text.contains(&row), "missing {row}");
        }
        assert!(text.contains(&format!("{layer},sequences,,8\n")));
        assert!(text.contains(&format!("{layer},never_selected_fraction,,0.75\n")));
        assert!(text.contains(&format!("{layer},entropy,,{}\n", entropy(&[1, 1, 1, 1]))));
    }
}

#[test]
fn route_stats_matches_library_and_counts_sum_to_k() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    ok(&["train", "--preset", "micro", "--steps", "3", "--seq-len", "16", "--batch-size", "2", "--out-dir", p(&run_dir)]);
    let ckpt_path = run_dir.join("final.ckpt");
    let csv = dir.path().join("rs.csv");
    ok(&["route-stats", "--checkpoint", p(&ckpt_path), "--batches", "3", "--batch-size", "5", "--csv", p(&csv)]);

    let ckpt: Checkpoint<f32> = Checkpoint::load(&ckpt_path).unwrap();
    let model = ckpt.to_model(None).unwrap();
    let corpus = TokenCorpus::markov(256, &Default::default()).unwrap();
    let batches = corpus.eval_batches(3, 5, 16).unwrap();
    let stats = route_stats(&model, &batches, None).unwrap();
    let mut expected = Vec::new();
    write_route_csv(&stats, &mut expected).unwrap();
    assert_eq!(std::fs::read(&csv).unwrap(), expected);
    for s in &stats {
        assert_eq!(s.sequences, 15);
        assert_eq!(s.counts.iter().sum::<u64>(), 15 * 4);
        assert!((s.frequency.iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(s.mean_routed_mass > 0.0 && s.mean_routed_mass <= 1.0);
    }

    let only = route_stats(&model, &batches, Some(&[3])).unwrap();
    assert_eq!(only, vec![stats[1].clone()]);
    assert_eq!(moc(&["route-stats", "--checkpoint", p(&ckpt_path), "--layers", "0"]).status.code(), Some(2));
}

const TINY_RETENTION: &str = "preset = \"micro\"
[retention.phase_a]
steps = 3
batch_size = 2
seq_len = 16
eval_every = 3
eval_batches = 1
[retention.phase_a.schedule]
kind = \"cosine\"
warmup = 1
[retention.phase_b]
steps = 2
batch_size = 2
seq_len = 16
eval_every = 2
eval_batches = 1
[retention.phase_b.schedule]
kind = \"cosine\"
warmup = 1
[retention.facts]
n_facts = 6
repeats = 20
[retention.instructions]
n_examples = 6
repeats = 20
";

fn read_report(path: &Path, seed: Option<u64>) -> RetentionReport {
    RetentionReport::read_csv(std::fs::File::open(path).unwrap(), seed).unwrap()
}

#[test]
fn retention_zero_phase_b_and_seed_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("r.toml");
    std::fs::write(&cfg, TINY_RETENTION).unwrap();
    let out_dir = dir.path().join("out");
    ok(&["retention", "--config", p(&cfg), "--seeds", "1,2,3", "--phase-b-steps", "0", "--out-dir", p(&out_dir)]);
    let reports: Vec<RetentionReport> =
        [1u64, 2, 3].iter().map(|&s| read_report(&out_dir.join(format!("retention_seed{s}.csv")), Some(s))).collect();
    for r in &reports {
        assert_eq!(r.variants.len(), 3);
        for v in &r.variants {
            let VariantOutcome::Completed(m) = &v.outcome else { panic!("{:?}", v.outcome) };
            assert!(m.rows().iter().all(|(_, a, b)| a == b));
        }
    }
    let mean = read_report(&out_dir.join("retention_mean.csv"), None);
    for v in Variant::ALL {
        let loss = |r: &RetentionReport| match &r.get(v).unwrap().outcome {
            VariantOutcome::Completed(m) => m.eval_loss_a,
            _ => unreachable!(),
        };
        let expected = reports.iter().map(loss).sum::<f64>() / 3.0;
        assert!((loss(&mean) - expected).abs() < 1e-12);
    }
    assert!(std::fs::read_to_string(out_dir.join("summary.txt")).unwrap().contains("moc-frozen-bank"));
    let resolved = RunConfig::from_toml_str(&std::fs::read_to_string(out_dir.join("config.resolved")).unwrap()).unwrap();
    assert_eq!(resolved.retention.seeds, vec![1, 2, 3]);
    assert_eq!(resolved.retention.phase_b.steps, 0);
}

#[test]
fn retention_csv_matches_library_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("r.toml");
    std::fs::write(&cfg, TINY_RETENTION).unwrap();
    let out_dir = dir.path().join("out");
    ok(&["retention", "--config", p(&cfg), "--seeds", "5", "--out-dir", p(&out_dir)]);
    let run = RunConfig::from_toml_str(TINY_RETENTION).unwrap();
    let lib = moc_core::retention::run_retention_protocol(&run.model, &run.retention.phase_a, &run.retention.protocol(), 5)
        .unwrap();
    assert_eq!(read_report(&out_dir.join("retention_seed5.csv"), Some(5)), lib);
}
