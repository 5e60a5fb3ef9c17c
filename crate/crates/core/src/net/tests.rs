use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::label::Label;
use crate::nn::testing::{random_tensor, FD_REL_TOL};
use crate::nn::{BnMode, LossConfig};
use crate::patch::LabeledPatch;
use crate::tensor::Tensor;
use crate::Error;

fn conv_unit(cin: usize, cout: usize) -> usize {
    9 * cin * cout + 2 * cout
}

#[test]
fn default_param_count_matches_closed_form() {
    // conv1..conv6, then the shortcut (first unit reads conv2's 32 channels), then fc1/fc2
    let main = conv_unit(3, 32)
        + conv_unit(32, 32)
        + conv_unit(32, 64)
        + conv_unit(64, 64)
        + conv_unit(64, 128)
        + conv_unit(128, 128);
    let shortcut = conv_unit(32, 128) + 14 * conv_unit(128, 128);
    let dense = (8 * 8 * 128) * 256 + 256 + 256 * 2 + 2;
    assert_eq!(main + shortcut + dense, 4_490_466);

    let arch = ArchConfig::default();
    assert_eq!(arch.param_count(), 4_490_466);
    let ablated = ArchConfig { enable_residual: false, ..arch.clone() };
    assert_eq!(arch.param_count() - ablated.param_count(), shortcut);

    let m = build_model::<f32>(&ArchConfig::reduced(), 0).unwrap();
    assert_eq!(m.param_count(), ArchConfig::reduced().param_count());
}

#[test]
fn build_is_deterministic() {
    let arch = ArchConfig::reduced();
    let a = build_model::<f32>(&arch, 7).unwrap();
    let b = build_model::<f32>(&arch, 7).unwrap();
    let c = build_model::<f32>(&arch, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params["conv1.kernels"], c.params["conv1.kernels"]);
    assert!(build_model::<f32>(&ArchConfig { patch_size: 20, ..arch }, 0).is_err());
}

#[test]
fn ablated_model_shares_main_path_weights() {
    let arch = ArchConfig::reduced();
    let full = build_model::<f64>(&arch, 3).unwrap();
    let plain = build_model::<f64>(&ArchConfig { enable_residual: false, ..arch }, 3).unwrap();
    for (name, t) in &plain.params {
        assert_eq!(&full.params[name], t, "{name}");
    }
    assert!(full.params.len() > plain.params.len());
}

#[test]
fn outputs_are_distributions() {
    let arch = ArchConfig::reduced();
    let m = build_model::<f64>(&arch, 1).unwrap();
    let x = random_tensor(&[3, 16, 16, 3], 9).map(|v| v.abs());
    for mode in [BnMode::Train, BnMode::Infer] {
        let probs = m.forward(&x, mode).unwrap();
        assert_eq!(probs.shape(), &[3, 2]);
        for row in probs.data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn wrong_patch_size_rejected() {
    let m = build_model::<f32>(&ArchConfig::reduced(), 1).unwrap();
    let x = Tensor::<f32>::zeros(&[2, 32, 32, 3]);
    assert!(matches!(m.forward(&x, BnMode::Infer), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn zero_shortcut_equals_ablation() {
    for pool in [ShortcutPool::AfterBlock, ShortcutPool::BeforeBlock] {
        let arch = ArchConfig { shortcut_pool: pool, ..ArchConfig::reduced() };
        let mut full = build_model::<f64>(&arch, 5).unwrap();
        for (name, _, _) in arch.residual_units() {
            let k = full.params.get_mut(&format!("{name}.kernels")).unwrap();
            *k = Tensor::zeros(k.shape());
        }
        let plain = build_model::<f64>(&ArchConfig { enable_residual: false, ..arch }, 5).unwrap();
        let x = random_tensor(&[4, 16, 16, 3], 11);
        for mode in [BnMode::Train, BnMode::Infer] {
            let a = full.forward(&x, mode).unwrap();
            let b = plain.forward(&x, mode).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-6, "{pool:?} {mode:?}");
        }
    }
}

#[test]
fn full_network_matches_finite_differences() {
    let mut total = (0, 0);
    for seed in 0..20u64 {
        for (arch, mode) in [
            (ArchConfig::reduced(), BnMode::Train),
            (ArchConfig::reduced(), BnMode::Infer),
            (ArchConfig { shortcut_pool: ShortcutPool::BeforeBlock, ..ArchConfig::reduced() }, BnMode::Train),
        ] {
            let r = crate::gradcheck::check_network(&arch, seed, mode, 3).unwrap();
            let (checked, skipped, worst) = (r.checked, r.skipped, r.max_rel_error);
            assert!(worst <= FD_REL_TOL, "seed {seed} {mode:?}: relative error {worst:e}");
            total.0 += checked;
            total.1 += skipped;
        }
    }
    // deep ReLU stacks put some unit within one step of its kink for roughly a third of coordinates
    let skipped_frac = total.1 as f64 / (total.0 + total.1) as f64;
    eprintln!("network gradient check: {} coordinates checked, {:.1}% skipped at kinks", total.0, 100.0 * skipped_frac);
    assert!(total.0 >= 2000 && skipped_frac < 0.5, "checked {} skipped {skipped_frac}", total.0);
}

#[test]
fn every_parameter_receives_a_gradient() {
    let arch = ArchConfig::reduced();
    let m = build_model::<f64>(&arch, 2).unwrap();
    let x = random_tensor(&[2, 16, 16, 3], 4);
    let pass = m.forward_pass(&x, BnMode::Train, true).unwrap();
    let g = m.backward(pass.cache.unwrap(), &Tensor::full(&[2, 2], 0.1)).unwrap();
    assert_eq!(g.param_grads.len(), m.params.len());
    for (name, t) in &m.params {
        assert_eq!(g.param_grads[name].shape(), t.shape(), "{name}");
        assert!(g.param_grads[name].all_finite());
    }
    assert_eq!(g.input_grad.shape(), x.shape());
}

pub(crate) fn toy_patches(n: usize, p: usize, seed: u64) -> Vec<LabeledPatch> {
    // authentic: smooth ramps; tampered: the same ramps plus a fine checkerboard
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Authentic } else { Label::Tampered };
            let (a, b, c) = (rng.gen_range(0.2..0.6f32), rng.gen_range(-0.2..0.2f32), rng.gen_range(-0.2..0.2f32));
            let mut data = Vec::with_capacity(p * p * 3);
            for y in 0..p {
                for x in 0..p {
                    for ch in 0..3 {
                        let mut v = a + b * y as f32 / p as f32 + c * x as f32 / p as f32 + 0.05 * ch as f32;
                        v += rng.gen_range(-0.02..0.02);
                        if label == Label::Tampered {
                            v += if (x + y) % 2 == 0 { 0.15 } else { -0.15 };
                        }
                        data.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            LabeledPatch {
                image_id: format!("toy{i}"),
                row: 0,
                col: 0,
                label: Some(label),
                data: Tensor::from_vec(&[p, p, 3], data).unwrap(),
            }
        })
        .collect()
}

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        patch_size: 8,
        conv_channels: [4, 4, 4, 4, 4, 4],
        residual_block_depth: 2,
        fc_width: 8,
        ..ArchConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let arch = tiny_arch();
    let m = build_model::<f32>(&arch, 1).unwrap();
    let data = toy_patches(10, 8, 1);
    let cfg = TrainConfig { learning_rate: 0.0, lambda_l1: 0.1, epochs: 1, batch_size: 4, ..TrainConfig::default() };
    let out = train(m.clone(), &data, None, &cfg).unwrap();
    assert_eq!(out.model.params, m.params);
    assert_eq!(out.model.epochs_trained, 1);
    assert_eq!(out.trace.len(), 1);
}

#[test]
fn training_is_deterministic() {
    let arch = tiny_arch();
    let data = toy_patches(12, 8, 2);
    let cfg = TrainConfig { learning_rate: 0.05, epochs: 3, batch_size: 5, seed: 9, ..TrainConfig::default() };
    let a = train(build_model::<f32>(&arch, 9).unwrap(), &data, Some(&data[..4]), &cfg).unwrap();
    let b = train(build_model::<f32>(&arch, 9).unwrap(), &data, Some(&data[..4]), &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace, b.trace);
    assert!(a.trace.iter().all(|r| r.loss.is_finite() && r.val_loss.is_some()));
}

#[test]
fn gamma_zero_training_equals_cross_entropy() {
    let arch = tiny_arch();
    let data = toy_patches(12, 8, 3);
    let base = TrainConfig {
        learning_rate: 0.05,
        lambda_l1: 0.0,
        epochs: 3,
        batch_size: 4,
        seed: 4,
        ..TrainConfig::default()
    };
    let focal = TrainConfig { loss: LossConfig { gamma: 0.0, ..LossConfig::default() }, ..base.clone() };
    let ce = TrainConfig { objective: Objective::CrossEntropy, ..base };
    let mut a = build_model::<f64>(&arch, 4).unwrap();
    let mut b = a.clone();
    for _ in 0..3 {
        a = train(a, &data, None, &TrainConfig { epochs: 1, ..focal.clone() }).unwrap().model;
        b = train(b, &data, None, &TrainConfig { epochs: 1, ..ce.clone() }).unwrap().model;
        for (name, t) in &a.params {
            assert!(t.max_abs_diff(&b.params[name]) < 1e-5, "{name}");
        }
    }
}

#[test]
fn single_class_training_proceeds() {
    let arch = tiny_arch();
    let data: Vec<_> = toy_patches(8, 8, 5).into_iter().filter(|p| p.label == Some(Label::Authentic)).collect();
    let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
    assert!(train(build_model::<f32>(&arch, 1).unwrap(), &data, None, &cfg).is_ok());
    assert!(train(build_model::<f32>(&arch, 1).unwrap(), &data[..1], None, &cfg).is_err());
}

#[test]
fn prediction_ignores_batch_partitioning() {
    let arch = tiny_arch();
    let data = toy_patches(10, 8, 6);
    let cfg = TrainConfig { learning_rate: 0.05, epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let m = train(build_model::<f32>(&arch, 1).unwrap(), &data, None, &cfg).unwrap().model;
    let all = predict_patches(&m, &data).unwrap();
    for (i, p) in data.iter().enumerate() {
        let one = predict_patches(&m, std::slice::from_ref(p)).unwrap();
        assert_eq!(one[0].label, all[i].label);
        assert!((one[0].tampered_prob - all[i].tampered_prob).abs() < 1e-6);
    }
}

#[test]
fn checkpoint_round_trip() {
    let arch = tiny_arch();
    let data = toy_patches(8, 8, 7);
    let cfg = TrainConfig { learning_rate: 0.05, epochs: 1, batch_size: 4, ..TrainConfig::default() };
    let m = train(build_model::<f32>(&arch, 1).unwrap(), &data, None, &cfg).unwrap().model;
    let bytes = write_checkpoint(&m).unwrap();
    let back = read_checkpoint(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(write_checkpoint(&back).unwrap(), bytes);
    let before = predict_patches(&m, &data).unwrap();
    assert_eq!(predict_patches(&back, &data).unwrap(), before);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&m, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), m);
}

#[test]
fn damaged_checkpoints_rejected() {
    let m = build_model::<f32>(&tiny_arch(), 1).unwrap();
    let bytes = write_checkpoint(&m).unwrap();
    for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(read_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    assert!(matches!(read_checkpoint(&flipped), Err(Error::CorruptCheckpoint(_))));
    let mut version = bytes.clone();
    version[8] = 9;
    let err = read_checkpoint(&version).unwrap_err();
    assert!(err.to_string().contains("version 9"), "{err}");

    let mut wrong = m.clone();
    wrong.arch.fc_width = 16;
    assert!(matches!(write_checkpoint(&wrong), Err(Error::CheckpointMismatch(_))));
}
