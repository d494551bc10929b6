use moc_core::flops::*;
use moc_core::model::ModelConfig;
use proptest::prelude::*;

const AUX: Option<u128> = Some(331_859);

#[test]
fn standard_layer_fixture() {
    let s = flops_standard_layer(&ModelConfig::vanilla_backbone(), 1, 1024).unwrap();
    assert_eq!(s.self_attention.q, 1_207_959_552);
    assert_eq!(s.self_attention.k, 402_653_184);
    assert_eq!(s.self_attention.matmuls, 3_221_225_472);
    assert_eq!(s.self_attention.softmax, 88_080_384);
    assert_eq!(s.self_attention.total, 6_530_531_328);
    assert_eq!(s.rope, 3_145_728);
    assert_eq!(s.norms, 6_299_648);
    assert_eq!(s.mlp.up, 3_623_878_656);
    assert_eq!(s.mlp.activation, 11_796_480);
    assert_eq!(s.mlp.total, 10_883_432_448);
    assert_eq!(s.residuals, 1_572_864);
    assert_eq!(s.total, 17_424_982_016);
}

#[test]
fn memory_extra_fixture() {
    let m = flops_memory_layer_extra(&ModelConfig::moc_paper(), 1, 1024, AUX).unwrap();
    assert_eq!(m.router.pool, 786_432);
    assert_eq!(m.router.linear, 6_292_992);
    assert_eq!(m.router.softmax, 20_485);
    assert_eq!(m.router.topk, 24_582);
    assert_eq!(m.router.total, 7_124_491);
    assert_eq!(m.router_aux, 331_859);
    assert_eq!(m.mem_preprocess.weighting, 3_194_880);
    assert_eq!(m.mem_preprocess.rmsnorm, 12_796_160);
    assert_eq!(m.mem_preprocess.total, 15_991_040);
    assert_eq!(m.mem_attention.k, 4_907_335_680);
    assert_eq!(m.mem_attention.matmuls, 4 * 1024 * 4160 * 768);
    assert_eq!(m.mem_attention.matmuls, 13_086_228_480);
    assert_eq!(m.mem_attention.softmax, 357_826_560);
    assert_eq!(m.mem_attention.total, 25_674_645_504);
    assert_eq!(m.extra_norm, 3_149_824);
    assert_eq!(m.extra_residual, 786_432);
    assert_eq!(m.total, 25_702_029_150);
}

#[test]
fn head_fixture() {
    let h = flops_head_and_loss(&ModelConfig::moc_paper(), 1, 1024).unwrap();
    assert_eq!(h.norm, 3_149_824);
    assert_eq!(h.lm_head, 77_309_411_328);
    assert_eq!(h.ce, 251_412_480);
    assert_eq!(h.total, 77_563_973_632);
}

#[test]
fn model_totals() {
    let backbone = flops_model(&ModelConfig::vanilla_backbone(), 1, 1024, None).unwrap();
    assert_eq!(backbone.forward, 356_363_685_888);
    let iso = flops_model(&ModelConfig::vanilla_iso(), 1, 1024, None).unwrap();
    assert_eq!(iso.forward, 495_763_542_016);
    assert_eq!(iso.backward, 991_527_084_032);
    assert_eq!(iso.fwd_bwd, 1_487_290_626_048);
    let moc = flops_model(&ModelConfig::moc_paper(), 1, 1024, AUX).unwrap();
    assert_eq!(moc.memory_layer_total, 43_127_011_166);
    assert_eq!(moc.forward, 459_171_802_488);
    assert_eq!((moc.standard_layers, moc.memory_layers), (12, 4));
    for r in [&backbone, &iso, &moc] {
        r.verify().unwrap();
    }
}

#[test]
fn rounded_table_values() {
    let t = |cfg: ModelConfig, aux| {
        let r = flops_model(&cfg, 1, 1024, aux).unwrap();
        let round = |x: u128| (x as f64 / 1e12 * 1000.0).round() / 1000.0;
        (round(r.forward), round(r.backward), round(r.fwd_bwd))
    };
    assert_eq!(t(ModelConfig::vanilla_backbone(), None), (0.356, 0.713, 1.069));
    assert_eq!(t(ModelConfig::vanilla_iso(), None), (0.496, 0.992, 1.487));
    assert_eq!(t(ModelConfig::moc_paper(), AUX), (0.459, 0.918, 1.378));
}

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 2,
        n_layers: 1,
        n_heads: 1,
        n_kv_heads: 1,
        d_ff: 2,
        vocab: 2,
        memory_layer_indices: vec![],
        ..ModelConfig::micro()
    }
}

#[test]
fn tiny_standard_layer_by_hand() {
    // q,k,v,o 8 each; matmuls 8; softmax 7; rope 12; norms 24; mlp 24 + 10; residuals 4
    let s = flops_standard_layer(&tiny(), 1, 1).unwrap();
    assert_eq!(s.self_attention.total, 47);
    assert_eq!(s.rope, 12);
    assert_eq!(s.norms, 24);
    assert_eq!(s.mlp.total, 34);
    assert_eq!(s.residuals, 4);
    assert_eq!(s.total, 121);
}

#[test]
fn tiny_head_by_hand() {
    // norm 2·(4+4) = 16, lm head 2·2·1·2 = 8, ce 1·2·5 = 10
    let cfg = ModelConfig { d_model: 1, vocab: 2, ..tiny() };
    let h = flops_head_and_loss(&cfg, 1, 2).unwrap();
    assert_eq!((h.norm, h.lm_head, h.ce), (16, 8, 10));
    assert_eq!(h.total, 34);
}

#[test]
fn iso_depth_bracket() {
    let target = flops_model(&ModelConfig::moc_paper(), 1, 1024, AUX).unwrap().forward;
    let s = iso_depth_search(target, &ModelConfig::moc_paper(), 1, 1024).unwrap();
    assert_eq!(s.depth, 22);
    assert_eq!(s.flops, 460_913_577_984);
    assert_eq!(s.below, Some((21, 443_488_595_968)));
    assert!(s.gap_above > 0.0 && s.gap_above < 0.004);
    assert!(s.gap_below.unwrap() > 0.03);

    let backbone = flops_model(&ModelConfig::vanilla_backbone(), 1, 1024, None).unwrap().forward;
    let s = iso_depth_search(backbone, &ModelConfig::moc_paper(), 1, 1024).unwrap();
    assert_eq!((s.depth, s.flops, s.gap_above), (16, backbone, 0.0));

    let head = flops_head_and_loss(&ModelConfig::moc_paper(), 1, 1024).unwrap().total;
    let s = iso_depth_search(head, &ModelConfig::moc_paper(), 1, 1024).unwrap();
    assert_eq!((s.depth, s.below), (0, None));

    assert!(iso_depth_search(head - 1, &ModelConfig::moc_paper(), 1, 1024).is_err());
    assert!(iso_depth_search(u128::MAX / 4, &ModelConfig::moc_paper(), 1, 1024).is_err());
}

#[test]
fn serialized_forms() {
    let r = flops_model(&ModelConfig::moc_paper(), 1, 1024, AUX).unwrap();
    let json = r.to_json().unwrap();
    let back: FlopsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("component,value\n"));
    assert!(text.contains("memory_extra.router.topk,24582\n"));
    assert!(text.contains("forward,459171802488\n"));
    assert_eq!(text.lines().count(), r.line_items().len() + 1);
}

fn diff_items(a: &FlopsReport, b: &FlopsReport, scale: u128) -> Vec<String> {
    let bi = b.line_items();
    a.line_items()
        .into_iter()
        .zip(bi)
        .filter(|((k, _), _)| !matches!(k.as_str(), "standard_layers" | "memory_layers"))
        .filter(|((_, x), (_, y))| *x != scale * y)
        .map(|((k, _), _)| k)
        .collect()
}

#[test]
fn batch_scaling_only_touches_router_aux() {
    let cfg = ModelConfig::moc_paper();
    let one = flops_model(&cfg, 1, 1024, None).unwrap();
    let two = flops_model(&cfg, 2, 1024, None).unwrap();
    let nonlinear = diff_items(&two, &one, 2);
    // everything that moved is aux or a total that contains it
    for k in &nonlinear {
        assert!(
            k == "memory_extra.router_aux" || k.ends_with("total") || k.starts_with("forward") || k.starts_with("backward") || k == "fwd_bwd",
            "{k}"
        );
    }
    assert!(nonlinear.contains(&"memory_extra.router_aux".to_string()));
    // with aux pinned per batch, everything else is exactly linear
    let two_pinned = flops_model(&cfg, 2, 1024, Some(2 * one.memory_extra.unwrap().router_aux)).unwrap();
    assert!(diff_items(&two_pinned, &one, 2).is_empty());
}

fn small_config() -> impl Strategy<Value = ModelConfig> {
    (1usize..4, 1usize..4, 1usize..4, 2usize..6, 1usize..5, 1usize..5, 1usize..8, 2usize..40).prop_map(
        |(hd, kv, group, layers, shared, routed, t, vocab)| {
            let heads = kv * group;
            let d = heads * hd * 2;
            let chapters = shared + routed;
            ModelConfig {
                d_model: d,
                n_layers: layers,
                n_heads: heads,
                n_kv_heads: kv,
                d_ff: 3 * d,
                vocab,
                memory_layer_indices: vec![1],
                bank_tokens: chapters * t,
                chapters,
                shared_chapters: shared,
                chapter_size: t,
                top_k: routed,
                mem_heads: heads,
                mem_kv_heads: heads,
                ..ModelConfig::micro()
            }
        },
    )
}

proptest! {
    #[test]
    fn flops_strictly_monotone(cfg in small_config(), b in 1usize..3, l in 2usize..20) {
        let f = |c: &ModelConfig, l: usize| flops_model(c, b, l, None).unwrap().forward;
        let base = f(&cfg, l);
        flops_model(&cfg, b, l, None).unwrap().verify().unwrap();
        prop_assert!(f(&cfg, l + 1) > base);
        let wider = ModelConfig { d_model: cfg.d_model + 2 * cfg.n_heads, ..cfg.clone() };
        prop_assert!(f(&wider, l) > base);
        let deeper = ModelConfig { n_layers: cfg.n_layers + 1, ..cfg.clone() };
        prop_assert!(f(&deeper, l) > base);
        let more_chapters = ModelConfig {
            chapters: cfg.chapters + 1,
            bank_tokens: (cfg.chapters + 1) * cfg.chapter_size,
            ..cfg.clone()
        };
        prop_assert!(f(&more_chapters, l) > base);
        let bigger_t = ModelConfig {
            chapter_size: cfg.chapter_size + 1,
            bank_tokens: cfg.chapters * (cfg.chapter_size + 1),
            ..cfg.clone()
        };
        prop_assert!(f(&bigger_t, l) > base);
        if cfg.top_k > 1 {
            let fewer = ModelConfig { top_k: cfg.top_k - 1, ..cfg.clone() };
            prop_assert!(f(&fewer, l) < base);
        }
    }
}
