//! Mini-batch SGD with focal loss and L1 regularization, plus patch prediction.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::net::model::{DetectorModel, ParamMap};
use crate::nn::{focal_loss_batch, BnMode, LossConfig};
use crate::patch::LabeledPatch;
use crate::tensor::{Real, Tensor};

/// Which parameters the L1 penalty touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum L1Scope {
    /// Conv kernels and dense weights.
    #[default]
    Weights,
    /// Every trainable tensor, including biases and batch-norm affine terms.
    All,
}

impl L1Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            L1Scope::Weights => "weights",
            L1Scope::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weights" => Some(Self::Weights),
            "all" => Some(Self::All),
            _ => None,
        }
    }
}

/// Training objective. `CrossEntropy` is the plain `-log p_y` loss with the
/// textbook `p - onehot` gradient, kept separate from the focal path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Focal,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_l1: f64,
    pub l1_scope: L1Scope,
    pub loss: LossConfig,
    pub objective: Objective,
    pub batch_size: usize,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lambda_l1: 1e-5,
            l1_scope: L1Scope::Weights,
            loss: LossConfig::default(),
            objective: Objective::Focal,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::Config(format!("lambda_l1 must be finite and >= 0, got {}", self.lambda_l1)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        self.loss.validate()
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Mean data loss over the epoch's batches (penalty excluded).
    pub loss: f64,
    pub l1: f64,
    /// Patch accuracy of the train-mode predictions seen during the epoch.
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real = f32> {
    pub model: DetectorModel<T>,
    pub trace: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (the last one without validation data).
    pub best_epoch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPrediction {
    pub label: Label,
    /// Probability of the predicted class.
    pub confidence: f64,
    pub tampered_prob: f64,
}

const PREDICT_CHUNK: usize = 64;

fn labels_of(patches: &[LabeledPatch]) -> Result<Vec<usize>> {
    patches
        .iter()
        .map(|p| {
            p.label.map(Label::index).ok_or_else(|| {
                Error::InvalidArgument(format!("patch ({}, {}) of {} has no label", p.row, p.col, p.image_id))
            })
        })
        .collect()
}

pub(crate) fn stack_patches<T: Real>(patches: &[&LabeledPatch]) -> Result<Tensor<T>> {
    let first = patches.first().ok_or_else(|| Error::InvalidArgument("empty patch batch".into()))?;
    let mut shape = vec![patches.len()];
    shape.extend_from_slice(first.data.shape());
    let mut data = Vec::with_capacity(patches.len() * first.data.len());
    for p in patches {
        if p.data.shape() != first.data.shape() {
            return Err(Error::shape("stack_patches", format!("{:?} vs {:?}", p.data.shape(), first.data.shape())));
        }
        data.extend(p.data.data().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
    }
    Tensor::from_vec(&shape, data)
}

/// Batch boundaries over `n` samples; a trailing single sample joins the previous batch.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch_size).map(|s| (s, (s + batch_size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

fn epoch_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ u64::from(epoch).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Mean loss and `N x K` logit gradient for a batch.
fn batch_loss<T: Real>(probs: &Tensor<T>, labels: &[usize], cfg: &TrainConfig) -> Result<(T, Tensor<T>)> {
    match cfg.objective {
        Objective::Focal => focal_loss_batch(probs, labels, &cfg.loss),
        Objective::CrossEntropy => {
            let (n, k) = (labels.len(), probs.shape()[1]);
            let clamp = T::from_f64_lossy(crate::nn::loss::PROB_CLAMP);
            let inv_n = T::one() / T::from_usize(n).unwrap();
            let mut grad = probs.scale(inv_n);
            let mut total = T::zero();
            for (i, &y) in labels.iter().enumerate() {
                if y >= k {
                    return Err(Error::InvalidLabel { label: y, classes: k });
                }
                total = total - probs[i * k + y].max(clamp).ln();
                grad[i * k + y] = grad[i * k + y] - inv_n;
            }
            Ok((total * inv_n, grad))
        }
    }
}

fn argmax_row<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn count_correct<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> usize {
    let k = probs.shape()[1];
    labels.iter().enumerate().filter(|&(i, &y)| argmax_row(&probs.data()[i * k..(i + 1) * k]) == y).count()
}

fn l1_terms<T: Real>(model: &DetectorModel<T>, scope: L1Scope) -> Vec<String> {
    model
        .arch
        .param_specs()
        .into_iter()
        .filter(|s| scope == L1Scope::All || s.kind.is_weight())
        .map(|s| s.name)
        .collect()
}

/// Mean loss and accuracy of `patches` in inference mode.
pub fn evaluate_loss<T: Real>(
    model: &DetectorModel<T>,
    patches: &[LabeledPatch],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let labels = labels_of(patches)?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no patches to evaluate".into()));
    }
    let (mut loss, mut correct) = (0.0, 0);
    for (start, chunk) in patches.chunks(PREDICT_CHUNK).enumerate().map(|(i, c)| (i * PREDICT_CHUNK, c)) {
        let refs: Vec<&LabeledPatch> = chunk.iter().collect();
        let probs = model.forward(&stack_patches(&refs)?, BnMode::Infer)?;
        let ys = &labels[start..start + chunk.len()];
        let (l, _) = batch_loss(&probs, ys, cfg)?;
        loss += l.as_f64() * chunk.len() as f64;
        correct += count_correct(&probs, ys);
    }
    let n = labels.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains for `cfg.epochs` epochs. With validation patches the parameters of
/// the lowest-validation-loss epoch are returned.
pub fn train<T: Real>(
    model: DetectorModel<T>,
    patches: &[LabeledPatch],
    val: Option<&[LabeledPatch]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_observer(model, patches, val, cfg, |_| {})
}

/// [`train`], calling `observer` after every epoch.
pub fn train_with_observer<T: Real>(
    mut model: DetectorModel<T>,
    patches: &[LabeledPatch],
    val: Option<&[LabeledPatch]>,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    model.check_consistency()?;
    if patches.len() < 2 {
        return Err(Error::InvalidArgument(format!("training needs at least 2 patches, got {}", patches.len())));
    }
    let labels = labels_of(patches)?;
    if labels.iter().all(|&y| y == labels[0]) {
        warn!("training set holds a single class ({}); proceeding", Label::ALL[labels[0]]);
    }
    let val = val.filter(|v| !v.is_empty());
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let lambda = T::from_f64_lossy(cfg.lambda_l1);
    let l1_names = l1_terms(&model, cfg.l1_scope);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs as usize);
    let mut best: Option<(f64, u32, ParamMap<T>, _)> = None;
    let first_epoch = model.epochs_trained;

    for e in 0..cfg.epochs {
        let epoch = first_epoch + e + 1;
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let (mut loss_sum, mut l1_sum, mut correct, mut batches) = (0.0, 0.0, 0usize, 0usize);
        for (s, t) in batch_ranges(order.len(), cfg.batch_size) {
            let idx = &order[s..t];
            let refs: Vec<&LabeledPatch> = idx.iter().map(|&i| &patches[i]).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let x = stack_patches::<T>(&refs)?;
            let pass = model.forward_pass(&x, BnMode::Train, true)?;
            let (loss, grad_logits) = batch_loss(&pass.probs, &ys, cfg)?;
            correct += count_correct(&pass.probs, &ys);
            let cache = pass.cache.expect("cache requested");
            let mut grads = model.backward(cache, &grad_logits)?.param_grads;

            let mut penalty = T::zero();
            if cfg.lambda_l1 > 0.0 {
                for name in &l1_names {
                    let w = model.param(name)?;
                    let g = grads.get_mut(name).expect("every parameter has a gradient");
                    for (gi, &wi) in g.data_mut().iter_mut().zip(w.data()) {
                        penalty = penalty + wi.abs();
                        if wi != T::zero() {
                            *gi = *gi + lambda * wi.signum();
                        }
                    }
                }
                penalty = penalty * lambda;
            }
            for (name, g) in &grads {
                let p = model.params.get_mut(name).expect("gradient names match parameters");
                p.axpy(-lr, g)?;
            }
            model.running_stats = pass.running_stats;
            loss_sum += loss.as_f64();
            l1_sum += penalty.as_f64();
            batches += 1;
        }
        let params_finite = model.params.values().all(Tensor::all_finite);
        if !params_finite || !loss_sum.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at epoch {epoch} (loss {loss_sum}); lower the learning rate"
            )));
        }
        let mut record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            l1: l1_sum / batches as f64,
            accuracy: correct as f64 / patches.len() as f64,
            val_loss: None,
            val_accuracy: None,
        };
        if let Some(v) = val {
            let (vl, va) = evaluate_loss(&model, v, cfg)?;
            record.val_loss = Some(vl);
            record.val_accuracy = Some(va);
            if best.as_ref().is_none_or(|(b, ..)| vl < *b) {
                best = Some((vl, epoch, model.params.clone(), model.running_stats.clone()));
            }
        }
        debug!("epoch {epoch}: loss {:.6} acc {:.4}", record.loss, record.accuracy);
        observer(&record);
        trace.push(record);
    }

    let mut best_epoch = first_epoch + cfg.epochs;
    if let Some((_, epoch, params, stats)) = best {
        model.params = params;
        model.running_stats = stats;
        best_epoch = epoch;
    }
    model.epochs_trained = first_epoch + cfg.epochs;
    model.train_config = cfg.clone();
    Ok(TrainOutcome { model, trace, best_epoch })
}

/// Inference-mode predictions; label is the argmax class.
pub fn predict_patches<T: Real>(model: &DetectorModel<T>, patches: &[LabeledPatch]) -> Result<Vec<PatchPrediction>> {
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(PREDICT_CHUNK) {
        let refs: Vec<&LabeledPatch> = chunk.iter().collect();
        out.extend(predict_batch(model, &stack_patches(&refs)?)?);
    }
    Ok(out)
}

/// Predictions for an `N x P x P x 3` batch.
pub fn predict_batch<T: Real>(model: &DetectorModel<T>, batch: &Tensor<T>) -> Result<Vec<PatchPrediction>> {
    let probs = model.forward(batch, BnMode::Infer)?;
    let k = probs.shape()[1];
    Ok(probs
        .data()
        .chunks_exact(k)
        .map(|row| {
            let j = argmax_row(row);
            PatchPrediction {
                label: Label::from_index(j).expect("binary output"),
                confidence: row[j].as_f64(),
                tampered_prob: row[Label::Tampered.index()].as_f64(),
            }
        })
        .collect())
}
