use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use upanets::arch::*;
use upanets::tensor::gradcheck::DEFAULT_EPS;
use upanets::tensor::{Graph, Tensor, Var};
use upanets::{Error, Result};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

fn declared(seed: u64, declare: impl FnOnce(&mut Init<f64>) -> Result<()>) -> (ParamStore<f64>, BatchNormBuffers) {
    let mut init = Init::new(rng(seed));
    declare(&mut init).unwrap();
    init.finish()
}

/// Σ y ⊙ w for a fixed random `w`.
fn weighted(g: &Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(randn(&g.shape(y), seed));
    g.sum(g.mul(y, w)?)
}

#[test]
fn cpa_identity_weight_is_a_no_op_before_normalization() {
    let cpa = CpaLayer::new("cpa", 3, 3, false);
    let (mut params, buffers) = declared(1, |i| cpa.declare(i));
    *params.get_mut("cpa.weight").unwrap() = Tensor::from_fn(vec![3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    *params.get_mut("cpa.bias").unwrap() = Tensor::zeros(vec![3]);
    let g = Graph::new();
    let x = randn(&[2, 3, 4, 5], 2);
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    cpa.forward(&ctx, g.constant(x.clone())).unwrap();
    assert_eq!(*g.value(ctx.traced("cpa.attn").unwrap()), x);
}

#[test]
fn cpa_mixes_channels_per_pixel() {
    let cpa = CpaLayer::new("cpa", 2, 2, false);
    let (mut params, buffers) = declared(1, |i| cpa.declare(i));
    *params.get_mut("cpa.weight").unwrap() = Tensor::full(vec![2, 2], 0.5);
    *params.get_mut("cpa.bias").unwrap() = Tensor::zeros(vec![2]);
    let mut x = Tensor::zeros(vec![1, 2, 2, 2]);
    x.data_mut()[1] = 1.0;
    x.data_mut()[4 + 1] = 3.0;
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    cpa.forward(&ctx, g.constant(x)).unwrap();
    let attn = g.value(ctx.traced("cpa.attn").unwrap());
    assert_eq!(attn.data()[1], 2.0);
    assert_eq!(attn.data()[4 + 1], 2.0);
    assert_eq!(attn.data()[0], 0.0);
}

#[test]
fn cpa_rejects_channel_mismatch_and_checks_gradients() {
    let cpa = CpaLayer::new("cpa", 3, 3, false);
    let (params, buffers) = declared(3, |i| cpa.declare(i));
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let bad = cpa.forward(&ctx, g.constant(randn(&[1, 4, 2, 2], 4)));
    assert!(matches!(bad, Err(Error::Dimension { .. })));

    let report = grad_check_module(
        "cpa",
        &params,
        &buffers,
        Mode::Train,
        &randn(&[1, 3, 2, 2], 5),
        Coverage::All,
        DEFAULT_EPS,
        // Train-mode batch norm cancels the per-channel bias exactly.
        &|name| name == "cpa.bias",
        |ctx, x| weighted(ctx.graph, cpa.forward(ctx, x)?, 6),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn cpa_downsample_pools_both_branches() {
    let cpa = CpaLayer::new("cpa", 4, 4, true);
    let (params, buffers) = declared(7, |i| cpa.declare(i));
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let y = cpa.forward(&ctx, g.constant(randn(&[2, 4, 6, 6], 8))).unwrap();
    assert_eq!(g.shape(y), vec![2, 4, 3, 3]);
    let widen = CpaLayer::new("w", 4, 6, false);
    assert!(!widen.has_residual());
}

#[test]
fn spa_examples() {
    let spa = SpaLayer::new("spa", 2, 2, true);
    let (mut params, buffers) = declared(0, |i| spa.declare(i));
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let y = spa.forward(&ctx, g.constant(x.clone())).unwrap();
    assert_eq!(g.value(y).data(), &[2.5]);

    *params.get_mut("spa.weight").unwrap() = Tensor::new(vec![4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let y = spa.forward(&ctx, g.constant(x)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0]);

    let bad = spa.forward(&ctx, g.constant(randn(&[1, 1, 3, 2], 1)));
    assert!(matches!(bad, Err(Error::Dimension { .. })));
}

#[test]
fn spa_gradients_match_finite_differences() {
    let spa = SpaLayer::new("spa", 3, 3, true);
    let (mut params, buffers) = declared(0, |i| spa.declare(i));
    *params.get_mut("spa.weight").unwrap() = randn(&[9], 11);
    let report = grad_check_module(
        "spa",
        &params,
        &buffers,
        Mode::Train,
        &randn(&[2, 4, 3, 3], 12),
        Coverage::All,
        DEFAULT_EPS,
        &|_| false,
        |ctx, x| weighted(ctx.graph, spa.forward(ctx, x)?, 13),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gap_examples() {
    let (params, buffers) = declared(0, |_| Ok(()));
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let c = gap(&ctx, g.constant(Tensor::full(vec![2, 3, 4, 4], -1.25))).unwrap();
    assert!(g.value(c).data().iter().all(|&v| v == -1.25));
    let m = gap(
        &ctx,
        g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()),
    )
    .unwrap();
    assert_eq!(g.value(m).data(), &[2.5]);
}

#[test]
fn uniform_spa_equals_gap_over_random_trials() {
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let size = 1 + (trial as usize % 8);
        let spa = SpaLayer::new("spa", size, size, true);
        let (params, buffers) = declared(trial, |i| spa.declare(i));
        let g = Graph::<f32>::new();
        let params = params.cast::<f32>();
        let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
        let x = g.constant(Tensor::randn(vec![2, 5, size, size], 3.0, &mut rng(1000 + trial)));
        let a = g.value(spa.forward(&ctx, x).unwrap());
        let b = g.value(gap(&ctx, x).unwrap());
        worst = worst.max(a.max_abs_diff(&b));
    }
    assert!(worst < 1e-6, "worst deviation {worst}");
}

fn block_output(cfg: UpaBlockConfig, x: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let block = UpaBlock::new("b", cfg).unwrap();
    let (params, buffers) = declared(seed, |i| block.declare(i));
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let y = block.forward(&ctx, g.constant(x.clone())).unwrap();
    (*g.value(y)).clone()
}

#[test]
fn block_shape_contract() {
    let x = randn(&[2, 16, 8, 8], 20);
    assert_eq!(
        block_output(UpaBlockConfig::new(16, 8, 1), &x, 1).shape(),
        &[2, 8, 8, 8]
    );
    assert_eq!(
        block_output(UpaBlockConfig::new(16, 8, 2), &x, 1).shape(),
        &[2, 8, 4, 4]
    );
}

#[test]
fn block_paths_are_distinct() {
    let x = randn(&[2, 16, 8, 8], 21);
    let with = block_output(UpaBlockConfig::new(16, 8, 1), &x, 2);
    let mut cfg = UpaBlockConfig::new(16, 8, 1);
    cfg.use_cpa = false;
    let without = block_output(cfg, &x, 2);
    assert!(with.max_abs_diff(&without) > 1e-3);
}

#[test]
fn block_grouping_rules() {
    let mut cfg = UpaBlockConfig::new(6, 8, 1);
    cfg.groups = 4;
    assert!(matches!(UpaBlock::new("b", cfg), Err(Error::Config(_))));
    cfg.groups = 3;
    assert!(matches!(UpaBlock::new("b", cfg), Err(Error::Config(_))));
    let mut cfg = UpaBlockConfig::new(8, 8, 3);
    cfg.groups = 1;
    assert!(matches!(UpaBlock::new("b", cfg), Err(Error::Config(_))));

    let x = randn(&[2, 8, 6, 6], 22);
    let default = block_output(UpaBlockConfig::new(8, 8, 1), &x, 3);
    let mut explicit = UpaBlockConfig::new(8, 8, 1);
    explicit.groups = 1;
    explicit.shuffle = false;
    let same = block_output(explicit, &x, 3);
    explicit.shuffle = true;
    let shuffled_single_group = block_output(explicit, &x, 3);
    assert!(default
        .data()
        .iter()
        .zip(same.data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(default
        .data()
        .iter()
        .zip(shuffled_single_group.data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    let mut grouped = UpaBlockConfig::new(8, 8, 1);
    grouped.groups = 4;
    let g4 = block_output(grouped, &x, 3);
    grouped.shuffle = true;
    let g4s = block_output(grouped, &x, 3);
    assert!(g4.max_abs_diff(&g4s) > 1e-3, "shuffle must change the grouped block");
}

#[test]
fn full_block_gradients_match_finite_differences() {
    let block = UpaBlock::new("b", UpaBlockConfig::new(8, 8, 1)).unwrap();
    let (params, buffers) = declared(30, |i| block.declare(i));
    let x = randn(&[2, 8, 8, 8], 31);
    let report = grad_check_module(
        "upa_block",
        &params,
        &buffers,
        Mode::Train,
        &x,
        Coverage::Sample {
            per_tensor: 12,
            seed: 32,
        },
        DEFAULT_EPS,
        &|name| name.ends_with("cpa.bias"),
        |ctx, x| weighted(ctx.graph, block.forward(ctx, x)?, 33),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");

    // Eval mode: the CPA bias is live once running statistics replace batch statistics.
    let mut buffers = buffers;
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    block.forward(&ctx, g.constant(x.clone())).unwrap();
    buffers.apply(&ctx.take_updates(), 0.1).unwrap();
    let report = grad_check_module(
        "upa_block_eval",
        &params,
        &buffers,
        Mode::Eval,
        &x,
        Coverage::Sample {
            per_tensor: 12,
            seed: 34,
        },
        DEFAULT_EPS,
        &|_| false,
        |ctx, x| weighted(ctx.graph, block.forward(ctx, x)?, 35),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn eval_before_training_is_a_state_error() {
    let block = UpaBlock::new("b", UpaBlockConfig::new(4, 4, 1)).unwrap();
    let (params, buffers) = declared(1, |i| block.declare(i));
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Eval, false);
    let err = block.forward(&ctx, g.constant(randn(&[1, 4, 4, 4], 1))).unwrap_err();
    assert!(matches!(err, Error::State(_)), "{err}");
}

fn layer_run(plan: UpaLayerPlan, x: &Tensor<f32>) -> (Tensor<f32>, Tensor<f32>) {
    let layer = UpaLayer::new("layer", plan, BlockOverrides::default()).unwrap();
    let mut init = Init::<f32>::new(rng(40));
    layer.declare(&mut init).unwrap();
    let (params, buffers) = init.finish();
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let y = layer.forward(&ctx, g.constant(x.clone())).unwrap();
    let first = ctx.traced("layer.block0").unwrap();
    ((*g.value(y)).clone(), (*g.value(first)).clone())
}

#[test]
fn layer_shapes_follow_the_width_plan() {
    let plan = plan_layer(32, 4).unwrap().downsampling();
    let x = Tensor::randn(vec![2, 32, 16, 16], 1.0, &mut rng(41));
    assert_eq!(layer_run(plan, &x).0.shape(), &[2, 64, 8, 8]);

    let plan = plan_layer(16, 4).unwrap();
    let x = Tensor::randn(vec![2, 16, 32, 32], 1.0, &mut rng(42));
    let (y, first) = layer_run(plan, &x);
    assert_eq!(y.shape(), &[2, 32, 32, 32]);
    assert_eq!(y.slice_channels(0, 16).unwrap(), first);
}

#[test]
fn layer_reports_block_index_on_width_mismatch() {
    let layer = UpaLayer::new("layer1", plan_layer(8, 4).unwrap(), BlockOverrides::default()).unwrap();
    let mut init = Init::<f32>::new(rng(43));
    layer.declare(&mut init).unwrap();
    let (params, buffers) = init.finish();
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let err = layer
        .forward(&ctx, g.constant(Tensor::zeros(vec![1, 6, 4, 4])))
        .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }), "{err}");
}

fn taps(channels: &[usize]) -> Vec<Tap> {
    channels
        .iter()
        .enumerate()
        .map(|(i, &c)| Tap {
            name: format!("t{i}"),
            channels: c,
            height: 4,
            width: 4,
        })
        .collect()
}

#[test]
fn exconnect_lengths_and_order() {
    let model = UpaNets::new(UpaNetsConfig::new(16, 10)).unwrap();
    assert_eq!(model.feature_len(), 496);
    let exc = ExConnect::new(ExcMode::ExcSpaAndGap, taps(&[5]), true).unwrap();
    assert_eq!(exc.out_len(), 5);

    let a = randn(&[2, 3, 4, 4], 50);
    let b = randn(&[2, 5, 4, 4], 51);
    let forward = |order: &[usize]| {
        let t = taps(&[3, 5]);
        let ordered: Vec<Tap> = order.iter().map(|&i| t[i].clone()).collect();
        let exc = ExConnect::new(ExcMode::ExcSpaAndGap, ordered, true).unwrap();
        let (params, buffers) = declared(0, |i| exc.declare(i));
        let g = Graph::new();
        let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
        let maps = [g.constant(a.clone()), g.constant(b.clone())];
        let inputs: Vec<Var> = order.iter().map(|&i| maps[i]).collect();
        let y = exc.forward(&ctx, &inputs).unwrap();
        (*g.value(y)).clone()
    };
    let ab = forward(&[0, 1]);
    let ba = forward(&[1, 0]);
    assert_eq!(ab.shape(), &[2, 8]);
    for n in 0..2 {
        let row_ab = &ab.data()[n * 8..(n + 1) * 8];
        let row_ba = &ba.data()[n * 8..(n + 1) * 8];
        assert_eq!(row_ab[..3], row_ba[5..]);
        assert_eq!(row_ab[3..], row_ba[..5]);
    }

    let (params, buffers) = declared(0, |i| exc.declare(i));
    let g = Graph::new();
    let ctx = Ctx::bind(&g, &params, &buffers, Mode::Train, false);
    let err = exc.forward(&ctx, &[]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn exc_mode_parsing() {
    for m in ExcMode::ALL {
        assert_eq!(m.as_str().parse::<ExcMode>().unwrap(), m);
        assert_eq!(ExcMode::from_code(m.code()).unwrap(), m);
    }
    assert!(matches!("exc_attention".parse::<ExcMode>(), Err(Error::Config(_))));
}

#[test]
fn forward_shapes_match_the_layer_table() {
    let model = Model::<f32>::new(UpaNetsConfig::new(16, 10), 60).unwrap();
    let g = Graph::new();
    let x = g.constant(Tensor::randn(vec![2, 3, 32, 32], 1.0, &mut rng(61)));
    let pass = model.forward(&g, x, Mode::Train, false).unwrap();
    assert_eq!(g.shape(pass.logits), vec![2, 10]);
    let shape_of = |name: &str| {
        let v = pass.trace.iter().rev().find(|(k, _)| k == name).unwrap().1;
        g.shape(v)
    };
    for row in model.summary(2) {
        if row.path.contains("block1-") {
            let layer = row.path.split('.').next().unwrap();
            assert_eq!(shape_of(layer), row.output, "{}", row.path);
        } else {
            assert_eq!(shape_of(&row.path), row.output, "{}", row.path);
        }
    }
    let expected = [
        ("root", vec![2, 16, 32, 32]),
        ("layer1", vec![2, 32, 32, 32]),
        ("layer2", vec![2, 64, 16, 16]),
        ("layer3", vec![2, 128, 8, 8]),
        ("layer4", vec![2, 256, 4, 4]),
        ("exc", vec![2, 496]),
    ];
    for (name, shape) in expected {
        assert_eq!(shape_of(name), shape, "{name}");
    }
}

#[test]
fn parameter_counts_are_near_the_published_sizes() {
    for (name, classes, millions) in [
        ("upa16", 10, 1.48),
        ("upa16", 100, 1.53),
        ("upa32", 10, 5.93),
        ("upa64", 10, 23.60),
    ] {
        let net = UpaNets::new(UpaNetsConfig::preset(name, classes).unwrap()).unwrap();
        let model = Model::<f32>::new(net.cfg.clone(), 0).unwrap();
        let count = model.param_count();
        let rel = count as f64 / (millions * 1e6) - 1.0;
        println!("{name}/{classes}: {count} parameters ({:+.2}%)", 100.0 * rel);
        assert!(rel.abs() <= 0.10);
    }
    assert!(UpaNetsConfig::preset("upa8", 10).is_err());
}

#[test]
fn grouped_no_cpa_ablation_is_smaller() {
    let base = Model::<f32>::new(UpaNetsConfig::new(16, 10), 0).unwrap();
    let mut cfg = UpaNetsConfig::new(16, 10);
    cfg.ablation = BlockOverrides {
        use_cpa: false,
        groups: 4,
        shuffle: true,
    };
    let small = Model::<f32>::new(cfg, 0).unwrap();
    assert!(small.param_count() < base.param_count());
}

#[test]
fn exc_spa_matches_exc_gap_at_initialization() {
    let x = Tensor::randn(vec![2, 3, 16, 16], 1.0, &mut rng(70));
    let run = |mode: ExcMode| {
        let mut cfg = UpaNetsConfig::new(4, 3);
        cfg.image_size = 16;
        cfg.exc_mode = mode;
        let model = Model::<f32>::new(cfg, 71).unwrap();
        let g = Graph::new();
        let pass = model.forward(&g, g.constant(x.clone()), Mode::Train, false).unwrap();
        let feats = pass.trace.iter().find(|(k, _)| k == "exc").unwrap().1;
        (*g.value(feats)).clone()
    };
    let spa = run(ExcMode::ExcSpa);
    let gap = run(ExcMode::ExcGap);
    assert!(spa.max_abs_diff(&gap) < 1e-6);
    assert_eq!(run(ExcMode::FinalGap).shape(), &[2, 64]);
}

#[test]
fn every_parameter_receives_gradient() {
    let mut cfg = UpaNetsConfig::new(8, 4);
    cfg.image_size = 16;
    let mut model = Model::<f64>::new(cfg, 80).unwrap();
    let x = randn(&[4, 3, 16, 16], 81);
    let labels = [0, 1, 2, 3];

    let g = Graph::new();
    let pass = model.forward(&g, g.constant(x.clone()), Mode::Train, true).unwrap();
    let loss = g.softmax_cross_entropy(pass.logits, &labels).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut weakest = (f64::INFINITY, String::new());
    for (name, &v) in &pass.params {
        let norm = grads.get(v).map_or(0.0, |t| t.norm());
        if name.ends_with("cpa.bias") {
            assert!(norm < 1e-12, "{name} should be cancelled by batch norm, got {norm}");
        } else if norm < weakest.0 {
            weakest = (norm, name.clone());
        }
    }
    assert!(weakest.0 > 1e-8, "weakest live gradient {weakest:?}");
    model.apply_updates(&pass.updates).unwrap();

    let g = Graph::new();
    let pass = model.forward(&g, g.constant(x), Mode::Eval, true).unwrap();
    let loss = g.softmax_cross_entropy(pass.logits, &labels).unwrap();
    let grads = g.backward(loss).unwrap();
    for (name, &v) in &pass.params {
        let norm = grads.get(v).map_or(0.0, |t| t.norm());
        assert!(norm > 1e-8, "{name} is dead in eval mode ({norm})");
    }
}

#[test]
fn summary_renders_a_total() {
    let model = Model::<f32>::new(UpaNetsConfig::new(16, 10), 0).unwrap();
    let text = render_summary(&model.summary(1));
    let total_line = text.lines().last().unwrap();
    assert!(total_line.starts_with("total"));
    assert!(total_line.trim_end().ends_with(&model.param_count().to_string()));
    let rows: usize = model.summary(1).iter().map(|r| r.params).sum();
    assert_eq!(rows, model.param_count());
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = UpaNetsConfig::new(16, 10);
    cfg.image_size = 20;
    assert!(matches!(UpaNets::new(cfg), Err(Error::Config(_))));
    let mut cfg = UpaNetsConfig::new(8, 10);
    cfg.ablation.groups = 4;
    assert!(matches!(UpaNets::new(cfg), Err(Error::Config(_))));
    let cfg = UpaNetsConfig::new(0, 10);
    assert!(matches!(UpaNets::new(cfg), Err(Error::Config(_))));
}
