//! Acceptance suite: one test per top-level criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them) and asserting its
//! own runtime budget.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::Instant;

use viptt::dataset::{
    class_weights, gen_synthetic_dataset, make_batches, stratified_split, AugmentSpec, Dataset,
    SampleRecord, SyntheticSpec,
};
use viptt::metrics::{accuracy, cohen_kappa, per_class_f1, ConfusionMatrix};
use viptt::model::{
    build_model, evaluate, load_checkpoint, replace_head, save_checkpoint, train, Component,
    ExtractorKind, Model, ModelConfig, PlateauScheduler, TrainConfig,
};
use viptt::nn::{
    layer_grad_check, weighted_cross_entropy, Conv2d, Dense, GlobalAvgPool, Layer, Lstm, MaxPool2,
    Relu,
};
use viptt::preprocess::{siz_resize, ResizeSpec, SplineOrder};
use viptt::rng::Rng;
use viptt::tensor::Tensor;
use viptt::volume_io::{Volume, VoxelDomain};

fn criterion(n: usize, name: &str, budget_secs: f64, body: impl FnOnce()) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed().as_secs_f64();
    match &result {
        Ok(()) => println!("criterion {n} ({name}): PASS [{elapsed:.1}s]"),
        Err(_) => println!("criterion {n} ({name}): FAIL [{elapsed:.1}s]"),
    }
    if let Err(e) = result {
        resume_unwind(e);
    }
    assert!(
        elapsed < budget_secs,
        "criterion {n} took {elapsed:.1}s, budget {budget_secs}s"
    );
}

fn random_tensor(dims: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = rng.uniform(lo, hi);
    }
    t
}

// ---------------------------------------------------------------------------
// 1. gradient fidelity
// ---------------------------------------------------------------------------

fn desk_scale_config() -> ModelConfig {
    ModelConfig {
        input_dims: (8, 32, 32),
        extractor: ExtractorKind::Tiny { feature_dim: 16 },
        lstm_units: 8,
        dense_units: 16,
        num_classes: 5,
    }
}

fn model_loss(model: &mut Model, x: &Tensor, labels: &[usize], w: &[f64]) -> f64 {
    let probs = model.forward(x, false).unwrap();
    weighted_cross_entropy(&probs, labels, w).unwrap().0
}

/// Central finite differences over a random subsample of each parameter
/// tensor (exhaustive probing of the full model would blow the runtime
/// budget; per-layer checks below are exhaustive).
fn model_fd_check(seed: u64) -> f64 {
    let config = desk_scale_config();
    let mut model = build_model(&config, seed).unwrap();
    let mut rng = Rng::new(Rng::derive(seed, 101));
    let x = random_tensor(&[1, 8, 32, 32], &mut rng, 0.05, 0.95);
    let labels = [rng.next_below(5) as usize];
    let w = [0.5, 1.5, 1.0, 2.0, 0.8];

    // analytic gradients
    let probs = model.forward(&x, true).unwrap();
    let (_, dlogits) = weighted_cross_entropy(&probs, &labels, &w).unwrap();
    model.backward(&dlogits).unwrap();
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let n_tensors = model.params().len();
    let mut worst: f64 = 0.0;
    for t in 0..n_tensors {
        let len = model.params()[t].value.data().len();
        for _ in 0..4.min(len) {
            let i = rng.next_below(len as u64) as usize;
            let orig = model.params()[t].value.data()[i];
            let a = analytic[t][i];
            // two step sizes: the larger rides out cancellation noise on tiny
            // gradients, the smaller avoids stepping across a relu/maxpool
            // kink; a correct gradient passes at least one of them
            let mut best = f64::MAX;
            for eps in [1e-5, 1e-6] {
                model.params_mut()[t].value.data_mut()[i] = orig + eps;
                let up = model_loss(&mut model, &x, &labels, &w);
                model.params_mut()[t].value.data_mut()[i] = orig - eps;
                let down = model_loss(&mut model, &x, &labels, &w);
                model.params_mut()[t].value.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
                best = best.min(rel);
            }
            worst = worst.max(best);
        }
    }
    worst
}

#[test]
fn criterion_1_gradient_fidelity() {
    criterion(1, "gradient fidelity", 60.0, || {
        for seed in 0..20u64 {
            let mut rng = Rng::new(Rng::derive(seed, 1));
            // per-layer exhaustive checks, small shapes
            let checks: Vec<(&str, Box<dyn Layer>, Vec<usize>)> = vec![
                ("dense", Box::new(Dense::new("d", 4, 3, &mut rng)), vec![2, 4]),
                ("relu", Box::new(Relu::new()), vec![2, 6]),
                (
                    "conv2d",
                    Box::new(Conv2d::new("c", 2, 3, 3, &mut rng)),
                    vec![2, 2, 5, 5],
                ),
                ("maxpool2", Box::new(MaxPool2::new()), vec![2, 2, 4, 4]),
                ("gap", Box::new(GlobalAvgPool::new()), vec![2, 2, 4, 4]),
                ("lstm", Box::new(Lstm::new("l", 3, 4, &mut rng)), vec![2, 4, 3]),
            ];
            for (name, mut layer, dims) in checks {
                let input = random_tensor(&dims, &mut rng, 0.1, 1.0);
                let err = layer_grad_check(layer.as_mut(), &input, 1e-6, Rng::derive(seed, 2));
                assert!(err < 1e-4, "{name} seed {seed}: rel err {err:.3e}");
            }
            let err = model_fd_check(seed);
            assert!(err < 1e-3, "end-to-end seed {seed}: rel err {err:.3e}");
        }
    });
}

// ---------------------------------------------------------------------------
// 2. SIZ oracle equivalence
// ---------------------------------------------------------------------------

/// Independent natural-cubic-spline moments via dense Gaussian elimination
/// on the full (S x S) system, rather than the tridiagonal solver used by
/// the implementation under test.
fn oracle_moments(y: &[f64]) -> Vec<f64> {
    let s = y.len();
    let mut a = vec![vec![0.0; s + 1]; s];
    a[0][0] = 1.0;
    a[s - 1][s - 1] = 1.0;
    for i in 1..s - 1 {
        a[i][i - 1] = 1.0;
        a[i][i] = 4.0;
        a[i][i + 1] = 1.0;
        a[i][s] = 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]);
    }
    for col in 0..s {
        let pivot = (col..s)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let pv = a[col][col];
        for row in 0..s {
            if row != col && a[row][col] != 0.0 {
                let f = a[row][col] / pv;
                for k in col..=s {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..s).map(|i| a[i][s] / a[i][i]).collect()
}

fn oracle_interp(y: &[f64], q: f64, order: SplineOrder) -> f64 {
    let s = y.len();
    let i = (q.floor() as usize).min(s - 2);
    let t = q - i as f64;
    match order {
        SplineOrder::Linear => y[i] * (1.0 - t) + y[i + 1] * t,
        SplineOrder::Cubic => {
            let m = oracle_moments(y);
            let u = 1.0 - t;
            // S(x) = m_i u^3/6 + m_{i+1} t^3/6 + (y_i - m_i/6) u + (y_{i+1} - m_{i+1}/6) t
            m[i] * u * u * u / 6.0
                + m[i + 1] * t * t * t / 6.0
                + (y[i] - m[i] / 6.0) * u
                + (y[i + 1] - m[i + 1] / 6.0) * t
        }
    }
}

fn oracle_queries(s: usize, t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![(s - 1) as f64 / 2.0];
    }
    (0..t)
        .map(|i| i as f64 * (s - 1) as f64 / (t - 1) as f64)
        .collect()
}

fn oracle_resize_axis(
    data: &[f64],
    dims: (usize, usize, usize),
    axis: usize,
    target: usize,
    order: SplineOrder,
) -> (Vec<f64>, (usize, usize, usize)) {
    let (d, h, w) = dims;
    let (nd, nh, nw) = match axis {
        0 => (target, h, w),
        1 => (d, target, w),
        _ => (d, h, target),
    };
    let src_len = [d, h, w][axis];
    if src_len == target {
        return (data.to_vec(), (nd, nh, nw));
    }
    let queries = oracle_queries(src_len, target);
    let mut out = vec![0.0; nd * nh * nw];
    for od in 0..nd {
        for oh in 0..nh {
            for ow in 0..nw {
                let line: Vec<f64> = (0..src_len)
                    .map(|i| {
                        let (sd, sh, sw) = match axis {
                            0 => (i, oh, ow),
                            1 => (od, i, ow),
                            _ => (od, oh, i),
                        };
                        data[(sd * h + sh) * w + sw]
                    })
                    .collect();
                out[(od * nh + oh) * nw + ow] = oracle_interp(&line, queries[match axis {
                    0 => od,
                    1 => oh,
                    _ => ow,
                }], order);
            }
        }
    }
    (out, (nd, nh, nw))
}

fn oracle_siz(
    vol: &[f64],
    dims: (usize, usize, usize),
    target: (usize, usize, usize),
    order: SplineOrder,
) -> Vec<f64> {
    let (v, d) = oracle_resize_axis(vol, dims, 0, target.0, order);
    let (v, d) = oracle_resize_axis(&v, d, 1, target.1, order);
    let (v, _) = oracle_resize_axis(&v, d, 2, target.2, order);
    v
}

#[test]
fn criterion_2_siz_oracle_equivalence() {
    criterion(2, "SIZ oracle equivalence", 10.0, || {
        let mut rng = Rng::new(42);
        for case in 0..25 {
            let dims = (
                2 + rng.next_below(6) as usize,
                2 + rng.next_below(6) as usize,
                2 + rng.next_below(6) as usize,
            );
            let target = (
                1 + rng.next_below(6) as usize,
                1 + rng.next_below(6) as usize,
                1 + rng.next_below(6) as usize,
            );
            let n = dims.0 * dims.1 * dims.2;
            let data: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let vol = Volume::new(dims, data.clone(), VoxelDomain::UnitNormalized).unwrap();
            for order in [SplineOrder::Linear, SplineOrder::Cubic] {
                let got = siz_resize(
                    &vol,
                    &ResizeSpec {
                        target_dims: target,
                        order,
                    },
                )
                .unwrap();
                let want = oracle_siz(&data, dims, target, order);
                let diff = got
                    .data()
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(
                    diff < 1e-9,
                    "case {case} dims {dims:?} -> {target:?} {order:?}: max diff {diff:.3e}"
                );
            }
            // identity-size resize is exact
            let same = siz_resize(
                &vol,
                &ResizeSpec {
                    target_dims: dims,
                    order: SplineOrder::Cubic,
                },
            )
            .unwrap();
            assert_eq!(same.data(), vol.data());
        }
    });
}

// ---------------------------------------------------------------------------
// 3. metric correctness
// ---------------------------------------------------------------------------

fn oracle_metrics(cm: &ConfusionMatrix) -> (f64, f64, Vec<f64>) {
    let k = cm.num_classes();
    let n: f64 = cm.total() as f64;
    let mut p0 = 0.0;
    let mut pe = 0.0;
    for c in 0..k {
        p0 += cm.count(c, c) as f64 / n;
        let row: u64 = (0..k).map(|j| cm.count(c, j)).sum();
        let col: u64 = (0..k).map(|j| cm.count(j, c)).sum();
        pe += (row as f64 / n) * (col as f64 / n);
    }
    let kappa = (p0 - pe) / (1.0 - pe);
    let f1 = (0..k)
        .map(|c| {
            let tp = cm.count(c, c) as f64;
            let fp: f64 = (0..k).filter(|&j| j != c).map(|j| cm.count(j, c) as f64).sum();
            let fn_: f64 = (0..k).filter(|&j| j != c).map(|j| cm.count(c, j) as f64).sum();
            if 2.0 * tp + fp + fn_ == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .collect();
    (p0, kappa, f1)
}

#[test]
fn criterion_3_metric_correctness() {
    criterion(3, "metric correctness", 10.0, || {
        // hand-worked matrices
        let perfect = ConfusionMatrix::from_counts(2, vec![5, 0, 0, 5]);
        assert_eq!(cohen_kappa(&perfect).unwrap().kappa, 1.0);
        let chance = ConfusionMatrix::from_counts(2, vec![2, 2, 2, 2]);
        assert!(cohen_kappa(&chance).unwrap().kappa.abs() < 1e-12);
        let worked = ConfusionMatrix::from_counts(2, vec![4, 1, 2, 3]);
        assert!((cohen_kappa(&worked).unwrap().kappa - 0.4).abs() < 1e-9);
        assert!((accuracy(&worked) - 0.7).abs() < 1e-9);
        assert!((per_class_f1(&worked)[0] - 8.0 / 11.0).abs() < 1e-9);

        // definition-level oracle on random matrices
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let k = 2 + rng.next_below(5) as usize;
            let mut counts = vec![0u64; k * k];
            // guarantee non-degenerate marginals
            for c in 0..k {
                counts[c * k + c] = 1 + rng.next_below(5);
            }
            for v in counts.iter_mut() {
                *v += rng.next_below(9);
            }
            let cm = ConfusionMatrix::from_counts(k, counts);
            let (_, kappa, f1) = oracle_metrics(&cm);
            let got = cohen_kappa(&cm).unwrap();
            assert!((got.kappa - kappa).abs() < 1e-9);
            let got_f1 = per_class_f1(&cm);
            for (a, b) in got_f1.iter().zip(&f1) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 4. transfer-protocol integrity
// ---------------------------------------------------------------------------

fn small_config(k: usize) -> ModelConfig {
    ModelConfig {
        input_dims: (2, 8, 8),
        extractor: ExtractorKind::Tiny { feature_dim: 8 },
        lstm_units: 4,
        dense_units: 8,
        num_classes: k,
    }
}

fn quick_cfg(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    }
}

/// pretrain (frozen extractor) then head-swap fine-tune; returns the final
/// checkpoint bytes plus the extractor tensors before/after pretraining.
fn transfer_run(dir: &std::path::Path, seed: u64) -> (Vec<u8>, bool) {
    let pre_ds = gen_synthetic_dataset(
        &SyntheticSpec::balanced(3, 5, (2, 8, 8)),
        7,
        dir.join("pre"),
    )
    .unwrap();
    let fine_ds = gen_synthetic_dataset(
        &SyntheticSpec::balanced(2, 6, (2, 8, 8)),
        8,
        dir.join("fine"),
    )
    .unwrap();

    let mut model = build_model(&small_config(3), seed).unwrap();
    let init_extractor: Vec<Tensor> = model
        .params()
        .iter()
        .filter(|p| p.name.starts_with("extractor"))
        .map(|p| p.value.clone())
        .collect();
    model.set_trainable(Component::Extractor, false);
    let (tr, va) = stratified_split(&pre_ds, 0.8, seed).unwrap();
    train(&mut model, &tr, &va, &quick_cfg(seed, 3)).unwrap();
    let frozen_ok = model
        .params()
        .iter()
        .filter(|p| p.name.starts_with("extractor"))
        .zip(&init_extractor)
        .all(|(p, init)| p.value.data() == init.data());

    let ckpt = dir.join(format!("pre_{seed}.ckpt"));
    save_checkpoint(&model, &ckpt).unwrap();
    let mut model = load_checkpoint(&ckpt).unwrap();
    replace_head(&mut model, 2, seed).unwrap();
    for c in [
        Component::ChannelMapper,
        Component::Extractor,
        Component::Lstm,
        Component::Head,
    ] {
        model.set_trainable(c, true);
    }
    let (tr, va) = stratified_split(&fine_ds, 0.8, seed).unwrap();
    train(&mut model, &tr, &va, &quick_cfg(seed, 3)).unwrap();
    let out = dir.join(format!("fine_{seed}.ckpt"));
    save_checkpoint(&model, &out).unwrap();
    (std::fs::read(&out).unwrap(), frozen_ok)
}

#[test]
fn criterion_4_transfer_protocol_integrity() {
    criterion(4, "transfer-protocol integrity", 120.0, || {
        // replace_head preserves every non-head tensor bit-exactly
        let mut model = build_model(&small_config(3), 1).unwrap();
        let before = model.snapshot();
        replace_head(&mut model, 2, 9).unwrap();
        for ((name, t), p) in before.iter().zip(model.params()) {
            assert_eq!(name, &p.name);
            if !name.starts_with("head.out") {
                assert_eq!(t.data(), p.value.data(), "{name} changed across head swap");
            }
        }

        // checkpoint round trip is bit-exact
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.value.data(), b.value.data());
        }

        // frozen-extractor pretraining + end-to-end seed determinism
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (bytes1, frozen1) = transfer_run(d1.path(), 5);
        let (bytes2, frozen2) = transfer_run(d2.path(), 5);
        assert!(frozen1 && frozen2, "extractor drifted while frozen");
        assert_eq!(bytes1, bytes2, "same seed must give byte-identical artifacts");
        let d3 = tempfile::tempdir().unwrap();
        let (bytes3, _) = transfer_run(d3.path(), 6);
        assert_ne!(bytes1, bytes3, "different seeds should differ");
    });
}

// ---------------------------------------------------------------------------
// 5. training-loop behavior
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_training_loop_behavior() {
    criterion(5, "training-loop behavior", 120.0, || {
        // rigged monotone-worsening loss trace
        let cfg = TrainConfig::default();
        let mut sched = PlateauScheduler::new(&cfg);
        let mut lrs = Vec::new();
        let mut stop_epoch = None;
        for epoch in 0..50 {
            let step = sched.observe(1.0 + epoch as f64);
            lrs.push(step.lr);
            if step.stop {
                stop_epoch = Some(epoch);
                break;
            }
        }
        assert_eq!(stop_epoch, Some(10), "early stop after early_stop_patience");
        assert!((lrs[4] - 0.001).abs() < 1e-15);
        assert!((lrs[5] - 0.0001).abs() < 1e-15, "0.001 -> 0.0001 after plateau");
        // lr trace is non-increasing powers of the factor
        for w in lrs.windows(2) {
            assert!(w[1] <= w[0] + 1e-18);
        }

        // overfit: 8 samples, train == val, 100% within 200 epochs
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic_dataset(
            &SyntheticSpec::balanced(2, 4, (2, 8, 8)),
            3,
            dir.path(),
        )
        .unwrap();
        // full-batch descent at a high rate: the gradient signal from eight
        // tiny samples is clean but small, so noise-free steps work best
        let overfit_config = ModelConfig {
            input_dims: (2, 8, 8),
            extractor: ExtractorKind::Tiny { feature_dim: 32 },
            lstm_units: 16,
            dense_units: 32,
            num_classes: 2,
        };
        let mut model = build_model(&overfit_config, 2).unwrap();
        let cfg = TrainConfig {
            lr_init: 0.5,
            batch_size: 8,
            max_epochs: 200,
            early_stop_patience: 200,
            plateau_patience: 200,
            seed: 4,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &ds, &ds, &cfg).unwrap();
        let (loss, cm) = evaluate(&mut model, &ds, cfg.batch_size).unwrap();
        assert_eq!(accuracy(&cm), 1.0, "failed to overfit 8 samples");
        // returned model is the minimum-val-loss epoch
        let best = history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert!(
            (loss - best).abs() < 1e-12,
            "returned model val loss {loss} vs history best {best}"
        );

        // order sensitivity: reversing frames of a sample changes the
        // trained model's output
        let t = viptt::dataset::load_sample_tensor(&ds.records[0].data_path).unwrap();
        let d = t.dims().to_vec();
        let fwd = t.reshape(&[1, d[0], d[1], d[2]]).unwrap();
        let mut rev = Tensor::zeros(&[1, d[0], d[1], d[2]]);
        let frame = d[1] * d[2];
        for f in 0..d[0] {
            rev.data_mut()[f * frame..(f + 1) * frame]
                .copy_from_slice(&t.data()[(d[0] - 1 - f) * frame..(d[0] - f) * frame]);
        }
        let pa = model.forward(&fwd, false).unwrap();
        let pb = model.forward(&rev, false).unwrap();
        let diff = pa.max_abs_diff(&pb);
        assert!(diff > 1e-6, "trained LSTM should be frame-order sensitive");
    });
}

// ---------------------------------------------------------------------------
// 6. directional transfer study
// ---------------------------------------------------------------------------

fn study_config(k: usize) -> ModelConfig {
    ModelConfig {
        input_dims: (8, 32, 32),
        extractor: ExtractorKind::Tiny { feature_dim: 16 },
        lstm_units: 8,
        dense_units: 16,
        num_classes: k,
    }
}

/// One study arm: optional pretrained init, optional class weights, optional
/// augmentation. Uniform retry policy: every arm gets a second run with a
/// different shuffle/init seed only if the first leaves some class with a
/// validation F1 of zero; among the runs taken, the one with the better
/// (validation min-F1, validation kappa) is kept. Per-class F1 is then
/// measured on a held-out test set large enough (20/class) for F1 to be
/// informative — the validation split leaves single-sample classes whose
/// F1 is a coin flip.
struct ArmResult {
    val_kappa: f64,
    test_min_f1: f64,
    test_f1: Vec<f64>,
}

fn study_train_config(
    lr: f64,
    epochs: usize,
    class_weights: Option<Vec<f64>>,
    augment: bool,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        lr_init: lr,
        batch_size: if lr > 0.2 { 8 } else { 24 },
        plateau_factor: 0.5,
        plateau_patience: 15,
        early_stop_patience: 20,
        max_epochs: epochs,
        class_weights,
        augment: if augment { Some(AugmentSpec::default()) } else { None },
        seed,
    }
}

fn min_f1(cm: &ConfusionMatrix) -> f64 {
    per_class_f1(cm).into_iter().fold(f64::INFINITY, f64::min)
}

#[allow(clippy::too_many_arguments)]
fn run_arm(
    seed: u64,
    pretrained_ckpt: Option<&std::path::Path>,
    weighted: Option<&[f64]>,
    augment: bool,
    train_ds: &Dataset,
    val_ds: &Dataset,
    test_ds: &Dataset,
) -> ArmResult {
    let mut best: Option<(f64, f64, ConfusionMatrix)> = None;
    for attempt in [40u64, 140] {
        if attempt == 140 && best.as_ref().map_or(false, |(mf, _, _)| *mf > 0.0) {
            break;
        }
        let mut model = match pretrained_ckpt {
            None => build_model(&study_config(5), 200 + seed + attempt).unwrap(),
            Some(ckpt) => {
                let mut m = load_checkpoint(ckpt).unwrap();
                replace_head(&mut m, 5, 300 + seed + attempt).unwrap();
                m.set_trainable(Component::Extractor, true);
                m
            }
        };
        let cfg = study_train_config(0.1, 50, weighted.map(|w| w.to_vec()), augment, seed + attempt);
        train(&mut model, train_ds, val_ds, &cfg).unwrap();
        let (_, val_cm) = evaluate(&mut model, val_ds, 16).unwrap();
        let val_kappa = cohen_kappa(&val_cm).map(|r| r.kappa).unwrap_or(0.0);
        let val_min_f1 = min_f1(&val_cm);
        let (_, test_cm) = evaluate(&mut model, test_ds, 16).unwrap();
        let better = best
            .as_ref()
            .map_or(true, |(mf, k, _)| (val_min_f1, val_kappa) > (*mf, *k));
        if better {
            best = Some((val_min_f1, val_kappa, test_cm));
        }
    }
    let (_, val_kappa, test_cm) = best.unwrap();
    ArmResult {
        val_kappa,
        test_min_f1: min_f1(&test_cm),
        test_f1: per_class_f1(&test_cm),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn criterion_6_directional_transfer_study() {
    criterion(6, "directional transfer study", 1200.0, || {
        let dims = (8, 32, 32);
        let mut no_pt = Vec::new();
        let mut pt = Vec::new();
        let mut cw_raises_min_f1 = 0;
        for seed in 0..5u64 {
            let dir = tempfile::tempdir().unwrap();
            // fresh datasets per seed so the 5 repetitions sample dataset
            // variation, not just init/shuffle variation
            let target = gen_synthetic_dataset(
                &SyntheticSpec {
                    num_classes: 5,
                    counts: vec![40, 30, 10, 6, 4],
                    dims,
                    noise: 0.1,
                },
                2000 + seed,
                dir.path().join("target"),
            )
            .unwrap();
            let (ttr, tva) = stratified_split(&target, 0.8, 20 + seed).unwrap();
            let test = gen_synthetic_dataset(
                &SyntheticSpec {
                    num_classes: 5,
                    counts: vec![20; 5],
                    dims,
                    noise: 0.1,
                },
                3000 + seed,
                dir.path().join("test"),
            )
            .unwrap();

            // pretrain on the 10-class action set with the extractor frozen.
            // A fraction of inits never escape the prior-fitting saddle at
            // desk scale, so retry with a fresh init seed (up to 5 attempts,
            // accepted at validation kappa > 0.2).
            let action = gen_synthetic_dataset(
                &SyntheticSpec::balanced(10, 40, dims),
                1000 + seed,
                dir.path().join("action"),
            )
            .unwrap();
            let (atr, ava) = stratified_split(&action, 0.8, 10 + seed).unwrap();
            let ckpt = dir.path().join("pre.ckpt");
            for attempt in 0..5u64 {
                let mut pm = build_model(&study_config(10), 100 + seed + 1000 * attempt).unwrap();
                pm.set_trainable(Component::Extractor, false);
                let cfg = study_train_config(0.3, 25, None, false, 30 + seed);
                train(&mut pm, &atr, &ava, &cfg).unwrap();
                let (_, pcm) = evaluate(&mut pm, &ava, 16).unwrap();
                let kappa = cohen_kappa(&pcm).map(|r| r.kappa).unwrap_or(0.0);
                if kappa > 0.2 || attempt == 4 {
                    save_checkpoint(&pm, &ckpt).unwrap();
                    break;
                }
            }

            let w = class_weights(&ttr.labels(), 5).unwrap();
            let r_no = run_arm(seed, None, None, false, &ttr, &tva, &test);
            let r_pt = run_arm(seed, Some(&ckpt), None, false, &ttr, &tva, &test);
            let r_cw = run_arm(seed, Some(&ckpt), Some(&w), false, &ttr, &tva, &test);
            let r_aug = run_arm(seed, Some(&ckpt), Some(&w), true, &ttr, &tva, &test);
            println!(
                "seed {seed}: val kappa no-pt {:.3} pt {:.3} pt+cw {:.3} pt+cw+aug {:.3} | \
                 test min-f1 pt {:.3} pt+cw {:.3} | pt+cw test f1 {:?}",
                r_no.val_kappa,
                r_pt.val_kappa,
                r_cw.val_kappa,
                r_aug.val_kappa,
                r_pt.test_min_f1,
                r_cw.test_min_f1,
                r_cw
                    .test_f1
                    .iter()
                    .map(|v| (v * 100.0).round() / 100.0)
                    .collect::<Vec<_>>()
            );
            if r_cw.test_min_f1 > r_pt.test_min_f1 {
                cw_raises_min_f1 += 1;
            }
            no_pt.push(r_no.val_kappa);
            pt.push(r_pt.val_kappa);
        }
        let m_no = median(no_pt);
        let m_pt = median(pt);
        println!(
            "medians: no-pt {m_no:.3} pt {m_pt:.3}; pt+cw raised min per-class F1 in \
             {cw_raises_min_f1}/5 seeds"
        );
        assert!(m_pt >= m_no, "PT median kappa {m_pt:.3} < No-PT {m_no:.3}");
        assert!(
            cw_raises_min_f1 >= 3,
            "class weights raised min per-class F1 in only {cw_raises_min_f1}/5 seeds"
        );
    });
}

// ---------------------------------------------------------------------------
// 7. data-layer properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_data_layer_properties() {
    criterion(7, "data-layer properties", 60.0, || {
        let mut rng = Rng::new(99);
        for case in 0..200u64 {
            let k = 2 + rng.next_below(5) as usize;
            let counts: Vec<usize> =
                (0..k).map(|_| 2 + rng.next_below(30) as usize).collect();
            let records: Vec<SampleRecord> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| {
                    (0..n).map(move |i| SampleRecord {
                        data_path: format!("c{c}_{i}.vpt").into(),
                        label: c,
                    })
                })
                .collect();
            let n_total = records.len();
            let ds = Dataset {
                records,
                num_classes: k,
                input_dims: None,
            };
            let (tr, va) = stratified_split(&ds, 0.8, case).unwrap();
            // disjoint and exhaustive
            assert_eq!(tr.len() + va.len(), n_total);
            let tr_paths: std::collections::HashSet<_> =
                tr.records.iter().map(|r| r.data_path.clone()).collect();
            assert!(va.records.iter().all(|r| !tr_paths.contains(&r.data_path)));
            // per-class proportion: round-half-up of 0.8*n_c, clamped so
            // both sides keep at least one sample
            for (c, &n_c) in counts.iter().enumerate() {
                let got = tr.records.iter().filter(|r| r.label == c).count();
                let want = ((0.8 * n_c as f64 + 0.5).floor() as usize).clamp(1, n_c - 1);
                assert_eq!(got, want, "case {case} class {c} of {n_c}");
            }
            // class-weight identity: sum w_c * n_c == N
            let w = class_weights(&ds.labels(), k).unwrap();
            let total: f64 = w
                .iter()
                .zip(&counts)
                .map(|(w, &n)| w * n as f64)
                .sum();
            assert!((total - n_total as f64).abs() < 1e-12);
            // split determinism
            let (tr2, va2) = stratified_split(&ds, 0.8, case).unwrap();
            assert_eq!(tr.labels(), tr2.labels());
            assert_eq!(
                va.records.iter().map(|r| &r.data_path).collect::<Vec<_>>(),
                va2.records.iter().map(|r| &r.data_path).collect::<Vec<_>>()
            );
        }

        // manifest + batching determinism on real files
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic_dataset(
            &SyntheticSpec::balanced(3, 4, (2, 8, 8)),
            5,
            dir.path(),
        )
        .unwrap();
        let spec = AugmentSpec::default();
        let b1 = make_batches(&ds, 4, 17, Some(&spec)).unwrap();
        let b2 = make_batches(&ds, 4, 17, Some(&spec)).unwrap();
        assert_eq!(b1.len(), b2.len());
        for (x, y) in b1.iter().zip(&b2) {
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.data.data(), y.data.data());
        }
        let b3 = make_batches(&ds, 4, 18, Some(&spec)).unwrap();
        let differs = b1
            .iter()
            .zip(&b3)
            .any(|(x, y)| x.labels != y.labels || x.data.data() != y.data.data());
        assert!(differs, "different seeds should shuffle differently");
    });
}
