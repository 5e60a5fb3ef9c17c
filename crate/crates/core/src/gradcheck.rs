//! Central finite-difference gradient checks.
//!
//! Shared by the unit tests and the acceptance suite. Relative error is
//! `|a - n| / max(|a| + |n|, 1e-8)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::net::{build_model, ArchConfig, DetectorModel};
use crate::nn::{focal_loss_batch, BnMode, LossConfig};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;

/// Uniform `[-1, 1)` tensor.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("positive shape")
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central differences of `f` at every coordinate of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = f(&probe);
        probe[i] = orig - FD_STEP;
        let down = f(&probe);
        probe[i] = orig;
        out[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

/// Largest elementwise relative error between two gradients of equal shape.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic.data().iter().zip(numeric.data()).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkCheck {
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or max-pool kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Compares backprop against central differences of the batch loss for
/// `per_tensor` sampled coordinates of every parameter tensor and of the input. Coordinates whose perturbation flips a ReLU
/// or a max-pool winner are skipped: the loss is not differentiable there.
pub fn check_network(arch: &ArchConfig, seed: u64, mode: BnMode, per_tensor: usize) -> Result<NetworkCheck> {
    let mut model = build_model::<f64>(arch, seed)?;
    // move batch-norm affine terms and biases off their init values
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for (name, t) in model.params.iter_mut() {
        if !name.ends_with(".kernels") && !name.ends_with(".weights") {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    for s in model.running_stats.values_mut() {
        for (m, v) in s.mean.iter_mut().zip(s.var.iter_mut()) {
            *m = rng.gen_range(-0.2..0.2);
            *v = rng.gen_range(0.5..1.5);
        }
    }
    let n = 2;
    let p = arch.patch_size;
    let x = random_tensor(&[n, p, p, 3], seed + 100);
    let labels = [0usize, 1];
    let cfg = LossConfig { gamma: 2.0, ..LossConfig::default() };

    let loss_of = |m: &DetectorModel<f64>, x: &Tensor<f64>| -> Result<(f64, u64)> {
        let pass = m.forward_pass(x, mode, true)?;
        let (l, _) = focal_loss_batch(&pass.probs, &labels, &cfg)?;
        Ok((l, pass.cache.expect("cache requested").activation_pattern(m)))
    };
    let pass = model.forward_pass(&x, mode, true)?;
    let (_, grad_logits) = focal_loss_batch(&pass.probs, &labels, &cfg)?;
    let cache = pass.cache.expect("cache requested");
    let base_pattern = cache.activation_pattern(&model);
    let grads = model.backward(cache, &grad_logits)?;

    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut check = |analytic: f64, plus: (f64, u64), minus: (f64, u64)| {
        if plus.1 != base_pattern || minus.1 != base_pattern {
            skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric));
        checked += 1;
    };

    let names: Vec<String> = model.params.keys().cloned().collect();
    for name in &names {
        let len = model.params[name].len();
        for _ in 0..per_tensor.min(len) {
            let i = rng.gen_range(0..len);
            let orig = model.params[name][i];
            model.params.get_mut(name).unwrap()[i] = orig + FD_STEP;
            let plus = loss_of(&model, &x)?;
            model.params.get_mut(name).unwrap()[i] = orig - FD_STEP;
            let minus = loss_of(&model, &x)?;
            model.params.get_mut(name).unwrap()[i] = orig;
            check(grads.param_grads[name][i], plus, minus);
        }
    }
    for _ in 0..per_tensor {
        let i = rng.gen_range(0..x.len());
        let mut xp = x.clone();
        xp[i] += FD_STEP;
        let plus = loss_of(&model, &xp)?;
        xp[i] -= 2.0 * FD_STEP;
        let minus = loss_of(&model, &xp)?;
        check(grads.input_grad[i], plus, minus);
    }
    Ok(NetworkCheck { checked, skipped, max_rel_error: worst })
}
