//! Batch normalization over the trailing (channel) axis.
//!
//! Statistics are taken over every leading position: `N x H x W` for conv
//! activations, `N` for dense activations.

use crate::error::{Error, Result};
use crate::nn::LayerGradients;
use crate::tensor::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential moving average.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running per-channel mean and (biased) variance used in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Real = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<U: Real>(&self) -> RunningStats<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect();
        RunningStats { mean: conv(&self.mean), var: conv(&self.var) }
    }
}

/// Values saved by the forward pass for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Real> {
    mode: BnMode,
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNormCache<T> {
    pub fn mode(&self) -> BnMode {
        self.mode
    }

    /// Standardized input `(x - mean) / sqrt(var + eps)`.
    pub fn normalized(&self) -> &Tensor<T> {
        &self.normalized
    }
}

pub struct BatchNormOutput<T: Real> {
    pub output: Tensor<T>,
    pub cache: BatchNormCache<T>,
    /// Running statistics after this call (unchanged in inference mode).
    pub running: RunningStats<T>,
}

fn channel_count<T: Real>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running: &RunningStats<T>,
) -> Result<usize> {
    let c = *input.shape().last().ok_or_else(|| Error::shape("batchnorm", "scalar input"))?;
    if input.rank() < 2 {
        return Err(Error::shape("batchnorm", format!("need a batch axis, got {:?}", input.shape())));
    }
    for (what, t) in [("scale", scale), ("shift", shift)] {
        if t.shape() != [c] {
            return Err(Error::shape("batchnorm", format!("{what} must be [{c}], got {:?}", t.shape())));
        }
    }
    if running.channels() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("running stats have {} channels, input {c}", running.channels()),
        ));
    }
    Ok(c)
}

pub fn batchnorm<T: Real>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    mode: BnMode,
    running: &RunningStats<T>,
) -> Result<BatchNormOutput<T>> {
    let c = channel_count(input, scale, shift, running)?;
    let batch = input.shape()[0];
    let eps = T::from_f64_lossy(BN_EPSILON);
    let (mean, var, new_running) = match mode {
        BnMode::Train => {
            if batch < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batchnorm in train mode needs at least 2 samples, got {batch}"
                )));
            }
            let m = T::from_usize(input.len() / c).unwrap();
            let mut mean = vec![T::zero(); c];
            for px in input.data().chunks_exact(c) {
                for (a, &v) in mean.iter_mut().zip(px) {
                    *a = *a + v;
                }
            }
            mean.iter_mut().for_each(|v| *v = *v / m);
            let mut var = vec![T::zero(); c];
            for px in input.data().chunks_exact(c) {
                for ((a, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
                    *a = *a + (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|v| *v = *v / m);
            let mom = T::from_f64_lossy(BN_MOMENTUM);
            let blend = |old: &[T], new: &[T]| -> Vec<T> {
                old.iter().zip(new).map(|(&o, &n)| mom * o + (T::one() - mom) * n).collect()
            };
            let updated = RunningStats { mean: blend(&running.mean, &mean), var: blend(&running.var, &var) };
            (mean, var, updated)
        }
        BnMode::Infer => (running.mean.clone(), running.var.clone(), running.clone()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = Vec::with_capacity(input.len());
    let mut output = Vec::with_capacity(input.len());
    for px in input.data().chunks_exact(c) {
        for ch in 0..c {
            let xhat = (px[ch] - mean[ch]) * inv_std[ch];
            normalized.push(xhat);
            output.push(scale[ch] * xhat + shift[ch]);
        }
    }
    Ok(BatchNormOutput {
        output: Tensor::from_vec(input.shape(), output)?,
        cache: BatchNormCache { mode, normalized: Tensor::from_vec(input.shape(), normalized)?, inv_std },
        running: new_running,
    })
}

/// Gradients w.r.t. the input, `"scale"` and `"shift"`.
pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    scale: &Tensor<T>,
    output_grad: &Tensor<T>,
) -> Result<LayerGradients<T>> {
    cache.normalized.check_same_shape("batchnorm_backward", output_grad)?;
    let c = cache.inv_std.len();
    if scale.shape() != [c] {
        return Err(Error::shape("batchnorm_backward", format!("scale must be [{c}]")));
    }
    let mut dscale = vec![T::zero(); c];
    let mut dshift = vec![T::zero(); c];
    for (dy, xh) in output_grad.data().chunks_exact(c).zip(cache.normalized.data().chunks_exact(c)) {
        for ch in 0..c {
            dshift[ch] = dshift[ch] + dy[ch];
            dscale[ch] = dscale[ch] + dy[ch] * xh[ch];
        }
    }
    let mut dx = Vec::with_capacity(output_grad.len());
    match cache.mode {
        BnMode::Train => {
            // dx = scale * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
            let m = T::from_usize(output_grad.len() / c).unwrap();
            for (dy, xh) in output_grad.data().chunks_exact(c).zip(cache.normalized.data().chunks_exact(c)) {
                for ch in 0..c {
                    let k = scale[ch] * cache.inv_std[ch] / m;
                    dx.push(k * (m * dy[ch] - dshift[ch] - xh[ch] * dscale[ch]));
                }
            }
        }
        BnMode::Infer => {
            for dy in output_grad.data().chunks_exact(c) {
                for ch in 0..c {
                    dx.push(dy[ch] * scale[ch] * cache.inv_std[ch]);
                }
            }
        }
    }
    let mut grads = LayerGradients::new(Tensor::from_vec(output_grad.shape(), dx)?);
    grads.insert("scale", Tensor::from_vec(&[c], dscale)?);
    grads.insert("shift", Tensor::from_vec(&[c], dshift)?);
    Ok(grads)
}
