//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line on
//! stdout (uncaptured) and the test fails if any criterion fails.

// `ensure!` negates its condition so that NaN measurements fail
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use altdetect::aggregate::{
    classify_by_threshold, fit_svm, grid_search_threshold, kkt_violation, svm_predict, tamper_ratio, ImageScore,
    LabeledScore, SvmParams, DEFAULT_GRID,
};
use altdetect::data::{generate_corpus, recompress_jpeg, synth_authentic, CorpusConfig, Split, SynthAlterConfig};
use altdetect::eval::{
    assign_splits, load_images, run_experiment, ExperimentConfig, ExperimentKind, Labeling, SplitMode,
};
use altdetect::gradcheck::{check_network, max_relative_error, numeric_grad, random_tensor, FD_REL_TOL};
use altdetect::net::{predict_patches, read_checkpoint, train, write_checkpoint, ArchConfig, TrainConfig};
use altdetect::nn::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, dense, dense_backward, focal_loss, focal_loss_batch,
    maxpool, maxpool_backward, relu, relu_backward, softmax_rows, BnMode, LossConfig, Padding, RunningStats,
};
use altdetect::patch::{extract_patches, label_patches, reassemble, LabelPolicy, LabeledPatch, RegionMask};
use altdetect::{build_model, Label, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e2s(e: altdetect::Error) -> String {
    e.to_string()
}

const GRAD_SEEDS: u64 = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const LOSS_CE_TOL: f64 = 1e-9;
const LOSS_ORACLE_REL_TOL: f64 = 1e-12;
const TRAIN_PATCHES: usize = 200;
const TRAIN_TARGET: f64 = 0.99;
const TRAIN_MAX_EPOCHS: u32 = 200;
const TRAIN_BUDGET: Duration = Duration::from_secs(300);
const E2E_PAIRS: usize = 100;
const E2E_TARGET: f64 = 0.90;

fn weighted_sum(out: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Inputs whose entries sit at least `gap` away from each other and from zero,
/// so neither ReLU nor max-pool switches branch under a finite-difference step.
fn spread_tensor(shape: &[usize], seed: u64, gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rng);
    let data = ranks.into_iter().map(|r| (r as f64 - n as f64 / 2.0 + 0.5) * gap).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn layer_checks(seed: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut track = |what: &str, a: &Tensor<f64>, n: &Tensor<f64>| -> Result<(), String> {
        let e = max_relative_error(a, n);
        ensure!(e <= FD_REL_TOL, "{what} seed {seed}: relative error {e:e}");
        worst = worst.max(e);
        Ok(())
    };

    // convolution, both paddings
    for padding in [Padding::Same, Padding::Valid] {
        let x = random_tensor(&[2, 5, 5, 3], seed);
        let k = random_tensor(&[3, 3, 3, 4], seed + 1);
        let b = random_tensor(&[4], seed + 2);
        let out = conv2d(&x, &k, Some(&b), padding).map_err(e2s)?;
        let w = random_tensor(out.shape(), seed + 3);
        let g = conv2d_backward(&x, &k, &w, padding).map_err(e2s)?;
        track(
            "conv input",
            &g.input_grad,
            &numeric_grad(&x, |x| weighted_sum(&conv2d(x, &k, Some(&b), padding).unwrap(), &w)),
        )?;
        track(
            "conv kernels",
            g.param("kernels"),
            &numeric_grad(&k, |k| weighted_sum(&conv2d(&x, k, Some(&b), padding).unwrap(), &w)),
        )?;
        track(
            "conv bias",
            g.param("bias"),
            &numeric_grad(&b, |b| weighted_sum(&conv2d(&x, &k, Some(b), padding).unwrap(), &w)),
        )?;
    }

    // fully connected
    let x = random_tensor(&[3, 6], seed + 4);
    let wt = random_tensor(&[6, 4], seed + 5);
    let b = random_tensor(&[4], seed + 6);
    let w = random_tensor(&[3, 4], seed + 7);
    let g = dense_backward(&x, &wt, &w).map_err(e2s)?;
    track("dense input", &g.input_grad, &numeric_grad(&x, |x| weighted_sum(&dense(x, &wt, &b).unwrap(), &w)))?;
    track("dense weights", g.param("weights"), &numeric_grad(&wt, |wt| weighted_sum(&dense(&x, wt, &b).unwrap(), &w)))?;
    track("dense bias", g.param("bias"), &numeric_grad(&b, |b| weighted_sum(&dense(&x, &wt, b).unwrap(), &w)))?;

    // relu and max pool away from their kinks
    let x = spread_tensor(&[2, 4, 4, 3], seed + 8, 0.01);
    let w = random_tensor(x.shape(), seed + 9);
    let g = relu_backward(&x, &w).map_err(e2s)?;
    track("relu", &g, &numeric_grad(&x, |x| weighted_sum(&relu(x), &w)))?;
    let w = random_tensor(&[2, 2, 2, 3], seed + 10);
    let g = maxpool_backward(&x, &w, 2).map_err(e2s)?;
    track("maxpool", &g, &numeric_grad(&x, |x| weighted_sum(&maxpool(x, 2).unwrap(), &w)))?;

    // batch norm in both modes
    for mode in [BnMode::Train, BnMode::Infer] {
        let x = random_tensor(&[3, 2, 2, 4], seed + 11);
        let scale = random_tensor(&[4], seed + 12).map(|v| v + 1.5);
        let shift = random_tensor(&[4], seed + 13);
        let mut running = RunningStats::new(4);
        running.mean = random_tensor(&[4], seed + 14).data().to_vec();
        running.var = random_tensor(&[4], seed + 15).map(|v| v + 1.5).data().to_vec();
        let w = random_tensor(x.shape(), seed + 16);
        let f = |x: &Tensor<f64>, s: &Tensor<f64>, t: &Tensor<f64>| {
            weighted_sum(&batchnorm(x, s, t, mode, &running).unwrap().output, &w)
        };
        let fwd = batchnorm(&x, &scale, &shift, mode, &running).map_err(e2s)?;
        let g = batchnorm_backward(&fwd.cache, &scale, &w).map_err(e2s)?;
        track("batchnorm input", &g.input_grad, &numeric_grad(&x, |x| f(x, &scale, &shift)))?;
        track("batchnorm scale", g.param("scale"), &numeric_grad(&scale, |s| f(&x, s, &shift)))?;
        track("batchnorm shift", g.param("shift"), &numeric_grad(&shift, |t| f(&x, &scale, t)))?;
    }

    // softmax followed by the focal loss, gradient w.r.t. logits
    let z = random_tensor(&[4, 2], seed + 17);
    let labels = [0, 1, 1, 0];
    let cfg = LossConfig { gamma: 2.0, alpha: vec![0.7, 1.3], ..LossConfig::default() };
    let (_, g) = focal_loss_batch(&softmax_rows(&z).map_err(e2s)?, &labels, &cfg).map_err(e2s)?;
    track(
        "softmax+focal",
        &g,
        &numeric_grad(&z, |z| focal_loss_batch(&softmax_rows(z).unwrap(), &labels, &cfg).unwrap().0),
    )?;
    Ok(worst)
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..GRAD_SEEDS {
        worst = worst.max(layer_checks(seed * 31)?);
        for mode in [BnMode::Train, BnMode::Infer] {
            let r = check_network(&ArchConfig::reduced(), seed, mode, 3).map_err(e2s)?;
            ensure!(r.max_rel_error <= FD_REL_TOL, "network seed {seed} {mode:?}: {:e}", r.max_rel_error);
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
            skipped += r.skipped;
        }
    }
    let took = start.elapsed();
    ensure!(checked > 0, "no network coordinates checked");
    ensure!(took < GRAD_BUDGET, "took {took:?}");
    Ok(format!(
        "{GRAD_SEEDS} seeds, max rel error {worst:.2e} (tol {FD_REL_TOL:e}), {checked} network coords ({skipped} at kinks skipped), {:.1}s",
        took.as_secs_f64()
    ))
}

fn criterion_loss() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = LossConfig { gamma: 0.0, alpha: vec![1.0, 1.0], ..LossConfig::default() };
    for _ in 0..1000 {
        let p0: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
        let probs = Tensor::from_vec(&[2], vec![p0, 1.0 - p0]).unwrap();
        for label in 0..2 {
            let (l, _) = focal_loss(&probs, label, &cfg).map_err(e2s)?;
            let ce = -probs[label].ln();
            worst = worst.max((l - ce).abs());
        }
    }
    ensure!(worst <= LOSS_CE_TOL, "gamma 0 vs cross entropy: {worst:e}");

    // (1 - 0.9)^5 * -ln(0.9) = 1e-5 * 0.105360515657826301227...
    let oracle = 1.053_605_156_578_263e-6;
    let cfg = LossConfig { gamma: 5.0, alpha: vec![1.0, 1.0], ..LossConfig::default() };
    let probs = Tensor::from_vec(&[2], vec![0.9f64, 0.1]).unwrap();
    let (l, _) = focal_loss(&probs, 0, &cfg).map_err(e2s)?;
    let rel = (l - oracle).abs() / oracle;
    ensure!(rel <= LOSS_ORACLE_REL_TOL, "gamma 5 at p_t 0.9: {l:e} vs {oracle:e} (rel {rel:e})");
    Ok(format!("gamma 0 max |diff| {worst:.1e}; gamma 5 p_t 0.9 = {l:.10e} (rel err {rel:.1e})"))
}

/// Authentic: smooth gradients with grain. Tampered: the same plus a fine texture.
fn two_class_patches(n: usize, p: usize, seed: u64) -> Vec<LabeledPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Authentic } else { Label::Tampered };
            let (a, by, bx) = (rng.gen_range(0.2..0.7f32), rng.gen_range(-0.2..0.2f32), rng.gen_range(-0.2..0.2f32));
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            let mut data = Vec::with_capacity(p * p * 3);
            for y in 0..p {
                for x in 0..p {
                    for c in 0..3 {
                        let mut v = a + by * y as f32 / p as f32 + bx * x as f32 / p as f32 + 0.04 * c as f32;
                        v += rng.gen_range(-0.02..0.02);
                        if label == Label::Tampered {
                            v += 0.08 * (1.9 * x as f32 + phase).sin() * (1.7 * y as f32).cos();
                        }
                        data.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            LabeledPatch {
                image_id: format!("p{i}"),
                row: 0,
                col: 0,
                label: Some(label),
                data: Tensor::from_vec(&[p, p, 3], data).unwrap(),
            }
        })
        .collect()
}

fn trainability_setup() -> (ArchConfig, Vec<LabeledPatch>, TrainConfig) {
    let arch = ArchConfig::reduced();
    let data = two_class_patches(TRAIN_PATCHES, arch.patch_size, 11);
    let cfg = TrainConfig {
        learning_rate: 0.02,
        epochs: TRAIN_MAX_EPOCHS,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    (arch, data, cfg)
}

fn criterion_trainability() -> Outcome {
    let (arch, data, cfg) = trainability_setup();
    let start = Instant::now();
    let run = || train(build_model::<f32>(&arch, cfg.seed).unwrap(), &data, None, &cfg);
    let a = run().map_err(e2s)?;
    let took = start.elapsed();
    let reached = a.trace.iter().find(|r| r.accuracy >= TRAIN_TARGET).map(|r| r.epoch);
    let preds = predict_patches(&a.model, &data).map_err(e2s)?;
    let final_acc =
        preds.iter().zip(&data).filter(|(p, d)| Some(p.label) == d.label).count() as f64 / data.len() as f64;
    let b = run().map_err(e2s)?;
    let identical = a.model == b.model
        && a.trace == b.trace
        && write_checkpoint(&a.model).map_err(e2s)? == write_checkpoint(&b.model).map_err(e2s)?;
    ensure!(reached.is_some(), "training accuracy never reached {TRAIN_TARGET} in {TRAIN_MAX_EPOCHS} epochs");
    ensure!(final_acc >= TRAIN_TARGET, "final inference accuracy {final_acc}");
    ensure!(took < TRAIN_BUDGET, "training took {took:?}");
    ensure!(identical, "rerun with the same seed differs");
    Ok(format!(
        "{TRAIN_PATCHES} patches: >= {:.0}% at epoch {}, final inference accuracy {:.2}%, {:.1}s per run, rerun bit-identical",
        100.0 * TRAIN_TARGET,
        reached.unwrap(),
        100.0 * final_acc,
        took.as_secs_f64()
    ))
}

fn e2e_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        split: SplitMode::Protocol(1),
        seed: 17,
        labeling: Labeling::WholeImage,
        ..Default::default()
    };
    cfg.arch = ArchConfig {
        patch_size: 32,
        conv_channels: [8, 8, 16, 16, 16, 16],
        residual_block_depth: 2,
        fc_width: 32,
        ..ArchConfig::default()
    };
    cfg.train = TrainConfig { learning_rate: 0.01, batch_size: 16, epochs: 20, ..TrainConfig::default() };
    cfg
}

fn corpus(dir: &std::path::Path, pairs: usize, size: usize, seed: u64) -> altdetect::data::Manifest {
    let cfg = CorpusConfig {
        count: pairs,
        height: size,
        width: size,
        seed,
        alter: SynthAlterConfig { seed, region_fraction: 1.0, ..SynthAlterConfig::default() },
        probes: false,
        ..CorpusConfig::default()
    };
    generate_corpus(dir, &cfg).unwrap()
}

fn criterion_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), E2E_PAIRS, 128, 17);
    ensure!(manifest.records.len() == 2 * E2E_PAIRS, "corpus has {} images", manifest.records.len());
    let cfg = e2e_config();
    let start = Instant::now();
    let report = run_experiment(&manifest, &cfg).map_err(e2s)?;
    let v = &report.variants[0];
    let r = &v.report;
    let (thr, svm) = (r.threshold.as_ref().unwrap(), r.svm.as_ref().unwrap());

    // manual oracle: predict each test patch, count, then decide
    let split = assign_splits(&manifest, &cfg).map_err(e2s)?;
    let test = load_images(&split, Some(Split::Test)).map_err(e2s)?;
    ensure!(test.len() == r.decisions.len(), "{} test images vs {} decisions", test.len(), r.decisions.len());
    let tau = v.calibration.threshold.model.tau;
    let m = &v.calibration.svm;
    let mut mismatches = 0;
    for (img, d) in test.iter().zip(&r.decisions) {
        let grid = extract_patches(&img.id, &img.pixels, cfg.arch.patch_size).map_err(e2s)?;
        let batch = Tensor::stack(&grid.patches.iter().map(|p| &p.data).collect::<Vec<_>>()).map_err(e2s)?;
        let probs = v.model.forward(&batch, BnMode::Infer).map_err(e2s)?;
        let tampered = probs.data().chunks_exact(2).filter(|row| row[1] > row[0]).count();
        let output = (100 * tampered) as f64 / grid.len() as f64;
        let by_threshold = if output > tau { Label::Tampered } else { Label::Authentic };
        let x = output / 100.0;
        let f: f64 =
            m.support.iter().zip(&m.dual_coef).map(|(s, a)| a * (-m.rbf_gamma * (s - x) * (s - x)).exp()).sum::<f64>()
                + m.bias;
        let by_svm = if f > 0.0 { Label::Tampered } else { Label::Authentic };
        let same = d.image_id == img.id
            && d.total == grid.len()
            && d.tampered == tampered
            && d.output == output
            && d.label_threshold == Some(by_threshold)
            && d.label_svm == Some(by_svm)
            && d.truth == img.label;
        mismatches += usize::from(!same);
    }
    let took = start.elapsed();
    ensure!(r.patch.accuracy >= E2E_TARGET, "patch accuracy {:.4}", r.patch.accuracy);
    ensure!(thr.accuracy >= E2E_TARGET, "thresholding accuracy {:.4}", thr.accuracy);
    ensure!(svm.accuracy >= E2E_TARGET, "svm accuracy {:.4}", svm.accuracy);
    ensure!(mismatches == 0, "{mismatches} decisions differ from the manual oracle");
    Ok(format!(
        "{} images, {} test: patch {:.2}%, thresholding {:.2}% (tau {tau}), svm {:.2}%, oracle agrees on all, {:.0}s",
        manifest.records.len(),
        test.len(),
        100.0 * r.patch.accuracy,
        100.0 * thr.accuracy,
        100.0 * svm.accuracy,
        took.as_secs_f64()
    ))
}

fn labeled(output_pct: &[(usize, usize, Label)]) -> Vec<LabeledScore> {
    output_pct
        .iter()
        .enumerate()
        .map(|(i, &(k, n, label))| LabeledScore { score: ImageScore::new(&format!("i{i}"), n, k).unwrap(), label })
        .collect()
}

fn criterion_aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..1000 {
        let n = rng.gen_range(1..300);
        let rate: f64 = rng.gen_range(0.0..1.0);
        let preds: Vec<Label> =
            (0..n).map(|_| if rng.gen_bool(rate) { Label::Tampered } else { Label::Authentic }).collect();
        let mut count = 0;
        for p in &preds {
            if *p == Label::Tampered {
                count += 1;
            }
        }
        let s = tamper_ratio("x", &preds).map_err(e2s)?;
        ensure!(s.total_patches == n && s.tampered_patches == count, "vector {t}: counts");
        ensure!(s.output == 100.0 * count as f64 / n as f64, "vector {t}: output {} for {count}/{n}", s.output);
    }

    for t in 0..100 {
        let n = rng.gen_range(2..60);
        let mut items: Vec<(usize, usize, Label)> = (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Authentic } else { Label::Tampered };
                let total = rng.gen_range(1..40);
                (rng.gen_range(0..=total), total, label)
            })
            .collect();
        items.shuffle(&mut rng);
        let scores = labeled(&items);
        let got = grid_search_threshold(&scores, &DEFAULT_GRID).map_err(e2s)?;
        let mut best = (f64::NAN, -1.0);
        for tau in 1..=10 {
            let tau = tau as f64;
            let mut correct = 0;
            for &(k, total, label) in &items {
                let pct = (100 * k) as f64 / total as f64;
                let decided = if pct > tau { Label::Tampered } else { Label::Authentic };
                correct += usize::from(decided == label);
            }
            let acc = correct as f64 / n as f64;
            ensure!(got.table[tau as usize - 1] == (tau, acc), "set {t}: table at tau {tau}");
            if acc > best.1 {
                best = (tau, acc);
            }
        }
        ensure!(got.model.tau == best.0, "set {t}: tau {} vs exhaustive {}", got.model.tau, best.0);
        for s in &scores {
            ensure!(
                classify_by_threshold(&s.score, &got.model)
                    == (if s.score.output > best.0 { Label::Tampered } else { Label::Authentic }),
                "set {t}: classify"
            );
        }
    }

    let params = SvmParams { c: 100.0, gamma: 10.0, ..SvmParams::default() };
    let mut worst_kkt: f64 = 0.0;
    for t in 0..100 {
        let cut = rng.gen_range(10..80);
        let gap = rng.gen_range(5..20);
        let n = rng.gen_range(4..40);
        let items: Vec<(usize, usize, Label)> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    (rng.gen_range(0..=cut), 100, Label::Authentic)
                } else {
                    (rng.gen_range((cut + gap).min(100)..=100), 100, Label::Tampered)
                }
            })
            .collect();
        let scores = labeled(&items);
        let fit = fit_svm(&scores, &params).map_err(e2s)?;
        for s in &scores {
            ensure!(
                svm_predict(&fit.model, &s.score).0 == s.label,
                "run {t}: training point {} misclassified",
                s.score.output
            );
        }
        let balance: f64 = fit.alphas.iter().zip(&fit.labels).map(|(a, l)| a * l.sign()).sum();
        ensure!(balance.abs() <= 1e-3, "run {t}: sum alpha y = {balance:e}");
        ensure!(fit.alphas.iter().all(|&a| (0.0..=params.c).contains(&a)), "run {t}: alpha out of box");
        let kkt = kkt_violation(&fit);
        ensure!(kkt <= 1e-3, "run {t}: KKT violation {kkt:e}");
        worst_kkt = worst_kkt.max(kkt);
    }
    Ok(format!("1000 ratio vectors exact, 100 grid searches exact, 100 separable SVM fits at 100% (max KKT violation {worst_kkt:.1e})"))
}

fn small_config(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = e2e_config();
    cfg.kind = kind;
    cfg.train.epochs = 4;
    cfg.arch.residual_block_depth = 1;
    cfg
}

fn criterion_ablation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 16, 64, 23);
    let report = run_experiment(&manifest, &small_config(ExperimentKind::Ablation)).map_err(e2s)?;
    ensure!(report.variants.len() == 2, "{} variants", report.variants.len());
    let names: Vec<&str> = report.variants.iter().map(|v| v.report.name.as_str()).collect();
    ensure!(names == ["residual", "no-residual"], "variants {names:?}");
    ensure!(!report.variants[1].model.arch.enable_residual, "second variant still has the shortcut");
    let delta = report.param_count_delta().ok_or("no parameter counts")?;
    ensure!(delta > 0, "parameter delta {delta}");
    let table = report.to_table();
    ensure!(
        table.contains("ablation summary") && table.lines().any(|l| l.starts_with("delta")),
        "summary missing:\n{table}"
    );
    let accs: Vec<String> = report
        .variants
        .iter()
        .map(|v| {
            let r = &v.report;
            format!(
                "{} thr {:.1}% svm {:.1}%",
                r.name,
                100.0 * r.threshold.as_ref().unwrap().accuracy,
                100.0 * r.svm.as_ref().unwrap().accuracy
            )
        })
        .collect();
    Ok(format!("{}; parameter delta {delta}", accs.join(", ")))
}

fn criterion_compression() -> Outcome {
    let img = synth_authentic(96, 80, 31).map_err(e2s)?;
    let (a, da) = recompress_jpeg(&img, 50).map_err(e2s)?;
    let (b, db) = recompress_jpeg(&img, 50).map_err(e2s)?;
    ensure!(a == b && da == db, "re-encode is not byte-identical");
    let delta = img.max_abs_diff(&da);
    ensure!(delta > 0.0, "q50 round trip was lossless");

    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 16, 64, 29);
    let report = run_experiment(&manifest, &small_config(ExperimentKind::Compression)).map_err(e2s)?;
    let names: Vec<&str> = report.variants.iter().map(|v| v.report.name.as_str()).collect();
    ensure!(names == ["png", "jpeg-q50"], "variants {names:?}");
    let table = report.to_table();
    for needle in ["compression summary", "format", "png", "jpeg-q50", "Thresholding", "SVM"] {
        ensure!(table.contains(needle), "table lacks {needle}:\n{table}");
    }
    let delta_row = table.lines().find(|l| l.starts_with("delta")).ok_or("no delta row")?;
    Ok(format!(
        "{} bytes, max pixel delta {delta:.3}, re-encode identical; {}",
        a.len(),
        delta_row.split_whitespace().collect::<Vec<_>>().join(" ")
    ))
}

fn criterion_patches() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 0..100 {
        let p = rng.gen_range(1..=16);
        let (rows, cols) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (h, w) = (rows * p, cols * p);
        let data: Vec<f32> = (0..h * w * 3).map(|_| rng.gen()).collect();
        let img = Tensor::from_vec(&[h, w, 3], data).unwrap();
        let grid = extract_patches("img", &img, p).map_err(e2s)?;
        ensure!(grid.len() == rows * cols, "image {t}: {} patches", grid.len());
        let back = reassemble(&grid).map_err(e2s)?;
        ensure!(back.shape() == img.shape(), "image {t}: shape");
        ensure!(
            back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "image {t}: not bit-exact"
        );

        let bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.3)).collect();
        let mask = RegionMask::from_bits(h, w, bits.clone()).map_err(e2s)?;
        for coverage in [0.0, rng.gen_range(0.0..1.0), 0.5, 1.0] {
            let labeled =
                label_patches(grid.clone(), LabelPolicy::RegionMask { mask: &mask, coverage_threshold: coverage })
                    .map_err(e2s)?;
            for patch in &labeled.patches {
                let mut hits = 0;
                for y in 0..p {
                    for x in 0..p {
                        hits += usize::from(bits[(patch.row * p + y) * w + patch.col * p + x]);
                    }
                }
                let expect = hits > 0 && hits as f64 >= coverage * (p * p) as f64;
                let want = if expect { Label::Tampered } else { Label::Authentic };
                ensure!(
                    patch.label == Some(want),
                    "image {t} coverage {coverage}: patch ({}, {})",
                    patch.row,
                    patch.col
                );
            }
        }
        for label in Label::ALL {
            let labeled = label_patches(grid.clone(), LabelPolicy::WholeImage(label)).map_err(e2s)?;
            ensure!(labeled.labels().iter().all(|&l| l == Some(label)), "image {t}: whole-image labels");
        }
    }
    Ok("100 random images reassembled bit-exact; region and whole-image labels match pixel counts".into())
}

fn criterion_persistence() -> Outcome {
    let (arch, data, mut cfg) = trainability_setup();
    cfg.epochs = 3;
    let model = train(build_model::<f32>(&arch, 4).unwrap(), &data, None, &cfg).map_err(e2s)?.model;
    let bytes = write_checkpoint(&model).map_err(e2s)?;
    let loaded = read_checkpoint(&bytes).map_err(e2s)?;
    ensure!(write_checkpoint(&loaded).map_err(e2s)? == bytes, "save after load differs");
    ensure!(loaded == model, "loaded model differs");
    let before = predict_patches(&model, &data).map_err(e2s)?;
    let after = predict_patches(&loaded, &data).map_err(e2s)?;
    ensure!(before == after, "predictions differ after reload");

    let mut rejected = Vec::new();
    let mut damaged: Vec<(&str, Vec<u8>)> =
        vec![("truncated", bytes[..bytes.len() / 2].to_vec()), ("empty", Vec::new())];
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x40;
    damaged.push(("bit flip", flipped));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    damaged.push(("bad magic", magic));
    let mut version = bytes.clone();
    version[8] = 99;
    damaged.push(("bad version", version));
    let mut trailer = bytes.clone();
    *trailer.last_mut().unwrap() ^= 1;
    damaged.push(("bad digest", trailer));
    for (what, b) in damaged {
        match read_checkpoint(&b) {
            Ok(_) => return Err(format!("{what} checkpoint accepted")),
            Err(e) => {
                let msg = e.to_string();
                ensure!(!msg.is_empty(), "{what}: empty diagnostic");
                rejected.push(what);
            }
        }
    }
    Ok(format!(
        "{} bytes, save/load/save identical, {} predictions identical, rejected: {}",
        bytes.len(),
        before.len(),
        rejected.join(", ")
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, Criterion); 9] = [
        ("1 gradient fidelity", criterion_gradients),
        ("2 loss oracle", criterion_loss),
        ("3 trainability", criterion_trainability),
        ("4 end-to-end desk scale", criterion_end_to_end),
        ("5 aggregation oracles", criterion_aggregation),
        ("6 ablation harness", criterion_ablation),
        ("7 compression harness", criterion_compression),
        ("8 patch round trip", criterion_patches),
        ("9 persistence", criterion_persistence),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let line = match &outcome {
            Ok(detail) => format!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed.push(name);
                format!("FAIL criterion {name}: {why}")
            }
        };
        let mut out = std::io::stdout().lock();
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
