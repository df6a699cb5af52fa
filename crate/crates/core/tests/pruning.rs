use fdmask::augment::PipelineSpec;
use fdmask::nn::{default_arch, predict_scores, train, Conv2d, Layer, LayerDef, Mode, Model, Tensor, TrainConfig};
use fdmask::pruning::{
    apply_plan, channel_importance, count_macs, count_params, finetune, finetune_subset, make_plan,
    retained_count, PruneSpec,
};
use fdmask::synthgen::{generate, ArtifactFamily, DatasetManifest, Split, SplitFractions};
use fdmask::Rng;
use proptest::prelude::*;

fn random_tensor(rng: &mut Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let data = (0..n * c * h * w).map(|_| rng.normal()).collect();
    Tensor::new(n, c, h, w, data).unwrap()
}

/// A random chain of conv blocks (optional bias, BatchNorm, max-pool) ending
/// in global pooling and a dense head, on a 12x12 input.
fn random_model(rng: &mut Rng) -> Model<f64> {
    let c0 = rng.uniform_int(1, 3).unwrap() as usize;
    let blocks = rng.uniform_int(1, 3).unwrap();
    let mut defs = Vec::new();
    let mut c_in = c0;
    let mut size = 12;
    for _ in 0..blocks {
        let c_out = rng.uniform_int(1, 8).unwrap() as usize;
        let kernel = if rng.bernoulli(0.5) { 3 } else { 1 };
        let stride = if size >= 6 && rng.bernoulli(0.3) { 2 } else { 1 };
        let padding = kernel / 2;
        defs.push(LayerDef::Conv2d { c_in, c_out, kernel, stride, padding, bias: rng.bernoulli(0.5) });
        size = (size + 2 * padding - kernel) / stride + 1;
        let bn = rng.bernoulli(0.6);
        let bn_after_relu = bn && rng.bernoulli(0.3);
        if bn && !bn_after_relu {
            defs.push(LayerDef::BatchNorm { channels: c_out });
        }
        defs.push(LayerDef::Relu);
        if bn_after_relu {
            defs.push(LayerDef::BatchNorm { channels: c_out });
        }
        if size >= 4 && rng.bernoulli(0.3) {
            defs.push(LayerDef::MaxPool { size: 2 });
            size /= 2;
        }
        c_in = c_out;
    }
    defs.push(LayerDef::GlobalAvgPool);
    defs.push(LayerDef::Dense { inputs: c_in, outputs: 1 });
    let mut model = Model::<f64>::init(c0, &defs, rng).unwrap();
    for layer in &mut model.layers {
        match layer {
            Layer::BatchNorm(b) => {
                for v in b.gamma.iter_mut().chain(b.beta.iter_mut()).chain(b.running_mean.iter_mut()) {
                    *v = rng.uniform(-1.0, 1.0).unwrap();
                }
                b.running_var.iter_mut().for_each(|v| *v = rng.uniform(0.2, 2.0).unwrap());
            }
            Layer::Conv2d(c) => {
                if let Some(bias) = &mut c.bias {
                    bias.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5).unwrap());
                }
            }
            _ => {}
        }
    }
    model
}

/// The unpruned model with every removed channel silenced: its outgoing
/// conv weights, bias, and BatchNorm scale/shift set to zero.
fn zeroed_oracle(model: &Model<f64>, spec: &PruneSpec) -> Model<f64> {
    let plan = make_plan(model, spec).unwrap();
    let mut out = model.clone();
    for lp in &plan.layers {
        let removed = lp.removed();
        let mut j = lp.layer;
        loop {
            match &mut out.layers[j] {
                Layer::Conv2d(c) if j == lp.layer => {
                    let per = c.c_in * c.kernel * c.kernel;
                    for &o in &removed {
                        c.weight[o * per..(o + 1) * per].fill(0.0);
                        if let Some(b) = &mut c.bias {
                            b[o] = 0.0;
                        }
                    }
                }
                Layer::BatchNorm(b) => {
                    for &o in &removed {
                        b.gamma[o] = 0.0;
                        b.beta[o] = 0.0;
                    }
                }
                Layer::Conv2d(_) | Layer::Dense(_) => break,
                _ => {}
            }
            j += 1;
        }
    }
    out
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zeroed_equivalence_on_random_models() {
    let mut rng = Rng::new(7);
    for _ in 0..50 {
        let model = random_model(&mut rng);
        let x = random_tensor(&mut rng, 3, model.input_channels, 12, 12);
        for p in [0.0, 0.2, 0.5, 0.8] {
            let spec = PruneSpec::new(p);
            let pruned = apply_plan(&model, &make_plan(&model, &spec).unwrap()).unwrap();
            let oracle = zeroed_oracle(&model, &spec);
            for mode in [Mode::Eval, Mode::Train] {
                let got = pruned.logits(&x, mode).unwrap();
                let want = oracle.logits(&x, mode).unwrap();
                assert!(max_abs(&got, &want) < 1e-5, "p={p} {mode:?}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn retained_counts_follow_ceiling_rule() {
    let mut rng = Rng::new(8);
    for _ in 0..50 {
        let model = random_model(&mut rng);
        for p in [0.2, 0.5, 0.8, 0.99] {
            let plan = make_plan(&model, &PruneSpec::new(p)).unwrap();
            for lp in &plan.layers {
                // ceil((1-p) C) with p = k/100 in integer arithmetic
                let k = (p * 100.0).round() as usize;
                let expected = ((100 - k) * lp.c_out).div_ceil(100).max(1);
                assert_eq!(lp.retained.len(), expected);
                assert!(lp.retained.windows(2).all(|w| w[0] < w[1]));
                let worst_kept = lp.retained.iter().map(|&c| lp.scores[c]).fold(f64::INFINITY, f64::min);
                assert_eq!(lp.threshold, worst_kept);
                for r in lp.removed() {
                    assert!(lp.scores[r] <= lp.threshold);
                }
            }
        }
    }
}

#[test]
fn importance_matches_direct_sum() {
    let mut rng = Rng::new(9);
    let model = Model::<f64>::init(3, &default_arch(3), &mut rng).unwrap();
    let Layer::Conv2d(conv) = &model.layers[3] else { panic!() };
    let scores = channel_importance(conv);
    for (o, s) in scores.iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..conv.c_in {
            for k in 0..9 {
                acc += conv.weight[(o * conv.c_in + i) * 9 + k].abs();
            }
        }
        assert!((s - acc).abs() < 1e-6);
    }
}

#[test]
fn importance_of_all_ones_channel() {
    let mut conv = Conv2d::<f32>::zeros(2, 4, 3, 1, 1, false);
    conv.weight[..18].fill(1.0);
    assert_eq!(channel_importance(&conv), vec![18.0, 0.0, 0.0, 0.0]);
}

#[test]
fn ties_keep_lower_indices() {
    let defs = [
        LayerDef::Conv2d { c_in: 1, c_out: 4, kernel: 1, stride: 1, padding: 0, bias: false },
        LayerDef::Relu,
        LayerDef::GlobalAvgPool,
        LayerDef::Dense { inputs: 4, outputs: 1 },
    ];
    let mut model = Model::<f64>::zeros(1, &defs).unwrap();
    if let Layer::Conv2d(c) = &mut model.layers[0] {
        c.weight = vec![1.0, 2.0, 1.0, 2.0];
    }
    let plan = make_plan(&model, &PruneSpec::new(0.75)).unwrap();
    assert_eq!(plan.layers[0].retained, vec![1]);
    let plan = make_plan(&model, &PruneSpec::new(0.5)).unwrap();
    assert_eq!(plan.layers[0].retained, vec![1, 3]);
    let plan = make_plan(&model, &PruneSpec::new(0.25)).unwrap();
    assert_eq!(plan.layers[0].retained, vec![0, 1, 3]);
}

#[test]
fn single_conv_counts() {
    let defs = [
        LayerDef::Conv2d { c_in: 3, c_out: 16, kernel: 3, stride: 1, padding: 0, bias: true },
        LayerDef::GlobalAvgPool,
        LayerDef::Dense { inputs: 16, outputs: 1 },
    ];
    let model = Model::<f32>::zeros(3, &defs).unwrap();
    let Layer::Conv2d(conv) = &model.layers[0] else { panic!() };
    assert_eq!(conv.weight.len() + conv.bias.as_ref().unwrap().len(), 448);
    assert_eq!(count_params(&model), 448 + 17);
    assert_eq!(count_macs(&model, 64, 64).unwrap(), 1_660_608 + 16);
}

/// Params and MACs of the default net on 3x64x64 input with conv widths `w`.
fn default_counts(w: [usize; 4]) -> (usize, u64) {
    let chans = [3, w[0], w[1], w[2], w[3]];
    let mut params = 0;
    let mut macs = 0u64;
    let mut side = 64;
    for i in 0..4 {
        side /= 2;
        params += chans[i] * chans[i + 1] * 9 + 2 * chans[i + 1];
        macs += (chans[i] * chans[i + 1] * 9 * side * side) as u64;
    }
    (params + w[3] + 1, macs + w[3] as u64)
}

#[test]
fn default_net_counts_follow_closed_form() {
    let mut rng = Rng::new(10);
    let model = Model::<f32>::init(3, &default_arch(3), &mut rng).unwrap();
    let mut last = (usize::MAX, u64::MAX);
    for (p, widths) in [
        (0.0, [16, 32, 64, 64]),
        (0.2, [13, 26, 52, 52]),
        (0.5, [8, 16, 32, 32]),
        (0.8, [4, 7, 13, 13]),
    ] {
        let pruned = apply_plan(&model, &make_plan(&model, &PruneSpec::new(p)).unwrap()).unwrap();
        let got = (count_params(&pruned), count_macs(&pruned, 64, 64).unwrap());
        assert_eq!(got, default_counts(widths), "p={p}");
        assert!(got.0 < last.0 && got.1 < last.1);
        last = got;
    }
    assert_eq!(default_counts([16, 32, 64, 64]).0, 60_753);
    assert_eq!(default_counts([8, 16, 32, 32]).0, 15_401);
}

#[test]
fn pruning_last_conv_shrinks_dense() {
    let mut rng = Rng::new(11);
    let model = Model::<f32>::init(3, &default_arch(3), &mut rng).unwrap();
    let pruned = apply_plan(&model, &make_plan(&model, &PruneSpec::new(0.5)).unwrap()).unwrap();
    let Some(Layer::Dense(d)) = pruned.layers.last() else { panic!() };
    assert_eq!(d.inputs, 32);
}

#[test]
fn zero_ratio_is_identity() {
    let mut rng = Rng::new(12);
    let model = random_model(&mut rng);
    let spec = PruneSpec::new(0.0);
    let once = apply_plan(&model, &make_plan(&model, &spec).unwrap()).unwrap();
    let twice = apply_plan(&once, &make_plan(&once, &spec).unwrap()).unwrap();
    assert_eq!(once, model);
    assert_eq!(twice, model);
    let x = random_tensor(&mut rng, 2, model.input_channels, 12, 12);
    assert_eq!(once.logits(&x, Mode::Eval).unwrap(), model.logits(&x, Mode::Eval).unwrap());
}

#[test]
fn invalid_ratio_and_foreign_plan_fail() {
    let mut rng = Rng::new(13);
    let model = Model::<f32>::init(3, &default_arch(3), &mut rng).unwrap();
    assert!(make_plan(&model, &PruneSpec::new(1.0)).is_err());
    let plan = make_plan(&model, &PruneSpec::new(0.5)).unwrap();
    let pruned = apply_plan(&model, &plan).unwrap();
    assert!(apply_plan(&pruned, &plan).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn positive_scaling_keeps_retained_set(seed in 0u64..1000, scale in 0.01f64..100.0, p in 0.0f64..0.95) {
        let mut rng = Rng::new(seed);
        let model = random_model(&mut rng);
        let mut scaled = model.clone();
        for layer in &mut scaled.layers {
            if let Layer::Conv2d(c) = layer {
                c.weight.iter_mut().for_each(|w| *w *= scale);
            }
        }
        let a = make_plan(&model, &PruneSpec::new(p)).unwrap();
        let b = make_plan(&scaled, &PruneSpec::new(p)).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            prop_assert_eq!(&la.retained, &lb.retained);
        }
    }

    #[test]
    fn retained_count_bounds(c in 1usize..512, p in 0.0f64..1.0) {
        let k = retained_count(c, p);
        prop_assert!(k >= 1 && k <= c);
        prop_assert!(k as f64 >= (1.0 - p) * c as f64 - 1e-9);
        prop_assert!((k as f64) < (1.0 - p) * c as f64 + 1.0 || k == 1);
    }
}

fn smoke_manifest(seed: u64) -> DatasetManifest {
    DatasetManifest {
        seed,
        image_size: 32,
        channels: 3,
        count_per_class: 50,
        train_family: ArtifactFamily::Grid { period: 8, amplitude: 0.1 },
        test_families: vec![],
        splits: SplitFractions { train: 1.0, val: 0.0, test: 0.0 },
    }
}

fn mean_bce(model: &Model<f32>, samples: &[&fdmask::synthgen::Sample]) -> f64 {
    let (scores, labels) = predict_scores(model, samples, None).unwrap();
    let total: f64 = scores
        .iter()
        .zip(&labels)
        .map(|(&s, &y)| {
            let s = s.clamp(1e-12, 1.0 - 1e-12);
            if y == 1 { -s.ln() } else { -(1.0 - s).ln() }
        })
        .sum();
    total / scores.len() as f64
}

#[test]
fn finetune_reduces_subset_loss() {
    let mut deltas = Vec::new();
    for seed in 0..5 {
        let data = generate(&smoke_manifest(seed)).unwrap();
        let samples = data.split(Split::Train);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            learning_rate: 1e-3,
            seed,
            pipeline: PipelineSpec::identity(),
            ..TrainConfig::default()
        };
        let mut model = Model::<f32>::init(3, &default_arch(3), &mut Rng::new(seed)).unwrap();
        train(&mut model, &samples, &cfg).unwrap();
        let pruned = apply_plan(&model, &make_plan(&model, &PruneSpec::new(0.5)).unwrap()).unwrap();
        let spec = PruneSpec { prune_ratio: 0.5, finetune_epochs: 5, finetune_fraction: 0.4 };
        let subset: Vec<_> = finetune_subset(samples.len(), &spec, &cfg)
            .unwrap()
            .into_iter()
            .map(|i| samples[i])
            .collect();
        assert_eq!(subset.len(), 40);
        let before = mean_bce(&pruned, &subset);
        let (tuned, history) = finetune(&pruned, &samples, &spec, &cfg).unwrap();
        assert_eq!(history.epoch_loss.len(), 5);
        deltas.push(mean_bce(&tuned, &subset) - before);
    }
    deltas.sort_by(f64::total_cmp);
    assert!(deltas[2] <= 0.0, "{deltas:?}");
}

#[test]
fn finetune_subset_is_seeded() {
    let spec = PruneSpec::new(0.5);
    let cfg = TrainConfig { seed: 4, ..TrainConfig::default() };
    let a = finetune_subset(1000, &spec, &cfg).unwrap();
    assert_eq!(a, finetune_subset(1000, &spec, &cfg).unwrap());
    // 2% of 1000 is 20, below one batch of 32
    assert_eq!(a.len(), 32);
    let other = TrainConfig { seed: 5, ..cfg.clone() };
    assert_ne!(a, finetune_subset(1000, &spec, &other).unwrap());
    assert_eq!(finetune_subset(10, &spec, &cfg).unwrap(), (0..10).collect::<Vec<_>>());
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let mut rng = Rng::new(14);
    let model = Model::<f32>::init(3, &default_arch(3), &mut rng).unwrap();
    let spec = PruneSpec { prune_ratio: 0.5, finetune_epochs: 0, finetune_fraction: 0.02 };
    let (out, history) = finetune(&model, &[], &spec, &TrainConfig::default()).unwrap();
    assert_eq!(out, model);
    assert!(history.epoch_loss.is_empty());
}
