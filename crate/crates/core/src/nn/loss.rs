//! Focal loss `-alpha_t (1 - p_t)^gamma log(p_t)` over softmax outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

pub const DEFAULT_GAMMA: f64 = 5.0;

/// Which softmax unit the scalar `p` of the binary formula refers to.
///
/// `AsPrinted` reads `p_t = p` for label 0 and `1 - p` otherwise, with `p` the
/// probability of class 0. `Conventional` reads `p_t = p` for label 1, with `p`
/// the probability of class 1. Both give `p_t = probs[label]` for a binary
/// softmax; the flag records which reading produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelConvention {
    #[default]
    AsPrinted,
    Conventional,
}

impl LabelConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelConvention::AsPrinted => "as_printed",
            LabelConvention::Conventional => "conventional",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "as_printed" => Some(Self::AsPrinted),
            "conventional" => Some(Self::Conventional),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Focusing exponent; a fixed hyperparameter, never trained.
    pub gamma: f64,
    /// Per-class weight `alpha_t`.
    pub alpha: Vec<f64>,
    pub label_convention: LabelConvention,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, alpha: vec![1.0, 1.0], label_convention: LabelConvention::AsPrinted }
    }
}

impl LossConfig {
    pub fn cross_entropy(classes: usize) -> Self {
        Self { gamma: 0.0, alpha: vec![1.0; classes], label_convention: LabelConvention::AsPrinted }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config(format!("focal alpha values must be positive, got {:?}", self.alpha)));
        }
        Ok(())
    }

    fn alpha_for(&self, label: usize) -> f64 {
        self.alpha.get(label).or(self.alpha.last()).copied().unwrap_or(1.0)
    }

    fn p_t<T: Real>(&self, probs: &[T], label: usize) -> T {
        if probs.len() != 2 {
            return probs[label];
        }
        match self.label_convention {
            LabelConvention::AsPrinted => {
                let p = probs[0];
                if label == 0 {
                    p
                } else {
                    T::one() - p
                }
            }
            LabelConvention::Conventional => {
                let p = probs[1];
                if label == 1 {
                    p
                } else {
                    T::one() - p
                }
            }
        }
    }
}

/// Loss for one sample and its gradient w.r.t. the pre-softmax logits.
pub fn focal_loss<T: Real>(probs: &Tensor<T>, label: usize, cfg: &LossConfig) -> Result<(T, Tensor<T>)> {
    let classes = probs.len();
    if probs.rank() != 1 {
        return Err(Error::shape("focal_loss", format!("expected [K] probabilities, got {:?}", probs.shape())));
    }
    if label >= classes {
        return Err(Error::InvalidLabel { label, classes });
    }
    let p = probs.data();
    let lo = T::from_f64_lossy(PROB_CLAMP);
    let pt = cfg.p_t(p, label).max(lo).min(T::one() - lo);
    let alpha = T::from_f64_lossy(cfg.alpha_for(label));
    let gamma = T::from_f64_lossy(cfg.gamma);
    let log_pt = pt.ln();
    let modulator = (T::one() - pt).powf(gamma);
    let loss = -alpha * modulator * log_pt;

    // dL/dz_j = alpha [gamma (1-pt)^(gamma-1) pt ln pt - (1-pt)^gamma] (delta_jy - p_j)
    let focus = if cfg.gamma == 0.0 { T::zero() } else { gamma * (T::one() - pt).powf(gamma - T::one()) * pt * log_pt };
    let coef = alpha * (focus - modulator);
    let grad =
        p.iter().enumerate().map(|(j, &pj)| coef * (if j == label { T::one() } else { T::zero() } - pj)).collect();
    Ok((loss, Tensor::from_vec(&[classes], grad)?))
}

/// Mean loss over an `N x K` probability batch and the gradient w.r.t. its logits.
pub fn focal_loss_batch<T: Real>(probs: &Tensor<T>, labels: &[usize], cfg: &LossConfig) -> Result<(T, Tensor<T>)> {
    let [n, k] = *probs.shape() else {
        return Err(Error::shape("focal_loss", format!("expected N x K probabilities, got {:?}", probs.shape())));
    };
    if labels.len() != n {
        return Err(Error::shape("focal_loss", format!("{} labels for {n} rows", labels.len())));
    }
    let scale = T::one() / T::from_usize(n).unwrap();
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
        let (l, g) = focal_loss(&Tensor::from_vec(&[k], row.to_vec())?, label, cfg)?;
        total = total + l;
        grad.extend(g.data().iter().map(|&v| v * scale));
    }
    Ok((total * scale, Tensor::from_vec(&[n, k], grad)?))
}
