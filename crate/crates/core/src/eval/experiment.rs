use serde::{Deserialize, Serialize};

use super::config::{Aggregation, ExperimentConfig, ExperimentKind, Labeling, SplitMode};
use super::metrics::{ConfusionMatrix, PatchEval};
use super::report::{evaluate_scores, Aggregators, EvalReport, ScoredImage, ScoredSet};
use crate::aggregate::{
    fit_svm, grid_search_threshold, tamper_ratio, LabeledScore, SvmModel, SvmParams, ThresholdSearch,
};
use crate::data::{
    carve_validation, decode_image, decode_mask, recompress_jpeg, split_generated, split_protocol, GeneratedSplitSizes,
    Manifest, Protocol, Split,
};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::net::{build_model, predict_patches, train, DetectorModel, EpochRecord};
use crate::patch::{extract_patches, label_patches, LabelPolicy, LabeledPatch, PatchGrid, RegionMask};
use crate::tensor::{Real, Tensor};

/// A decoded image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub id: String,
    pub label: Label,
    pub probe: Option<u8>,
    pub pixels: Tensor<f32>,
    pub mask: Option<RegionMask>,
}

impl LoadedImage {
    /// The same image after one JPEG encode/decode cycle.
    pub fn recompressed(&self, quality: u8) -> Result<Self> {
        let (_, pixels) = recompress_jpeg(&self.pixels, quality)?;
        Ok(Self { pixels, ..self.clone() })
    }
}

/// Decodes the images of one split (all images for `None`).
pub fn load_images(manifest: &Manifest, split: Option<Split>) -> Result<Vec<LoadedImage>> {
    manifest
        .records
        .iter()
        .filter(|r| split.is_none() || r.split == split)
        .map(|r| {
            Ok(LoadedImage {
                id: r.id(),
                label: r.label,
                probe: r.probe,
                pixels: decode_image(&manifest.resolve(&r.path))?,
                mask: r.mask.as_ref().map(|m| decode_mask(&manifest.resolve(m))).transpose()?,
            })
        })
        .collect()
}

pub fn label_image_patches(image: &LoadedImage, patch_size: usize, labeling: Labeling) -> Result<PatchGrid> {
    let grid = extract_patches(&image.id, &image.pixels, patch_size)?;
    let policy = match (labeling, image.label, &image.mask) {
        (Labeling::Region { coverage_threshold }, Label::Tampered, Some(mask)) => {
            LabelPolicy::RegionMask { mask, coverage_threshold }
        }
        (_, label, _) => LabelPolicy::WholeImage(label),
    };
    label_patches(grid, policy)
}

pub fn patches_for_training(
    images: &[LoadedImage],
    patch_size: usize,
    labeling: Labeling,
) -> Result<Vec<LabeledPatch>> {
    let mut out = Vec::new();
    for img in images {
        out.extend(label_image_patches(img, patch_size, labeling)?.patches);
    }
    Ok(out)
}

/// Predicts every patch once and reduces each image to its tamper percentage.
pub fn score_images<T: Real>(
    model: &DetectorModel<T>,
    images: &[LoadedImage],
    labeling: Labeling,
) -> Result<ScoredSet> {
    let mut confusion = ConfusionMatrix::default();
    let mut scored = Vec::with_capacity(images.len());
    for img in images {
        let grid = label_image_patches(img, model.arch.patch_size, labeling)?;
        let preds = predict_patches(model, &grid.patches)?;
        let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
        for (patch, &pred) in grid.patches.iter().zip(&labels) {
            confusion.add(patch.label.expect("labeled above"), pred);
        }
        scored.push(ScoredImage { label: img.label, probe: img.probe, score: tamper_ratio(&img.id, &labels)? });
    }
    Ok(ScoredSet { images: scored, patch: PatchEval::from_confusion(confusion) })
}

/// Fitted deciders plus the search table behind the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: ThresholdSearch,
    pub svm: SvmModel,
    pub svm_params: SvmParams,
    pub images: usize,
}

impl Calibration {
    pub fn aggregators(&self) -> Aggregators {
        Aggregators { threshold: Some(self.threshold.model), svm: Some(self.svm.clone()) }
    }
}

pub fn calibrate(scored: &[ScoredImage], svm: &SvmParams, grid: &[f64]) -> Result<Calibration> {
    let labeled: Vec<LabeledScore> =
        scored.iter().map(|s| LabeledScore { score: s.score.clone(), label: s.label }).collect();
    let threshold = grid_search_threshold(&labeled, grid)?;
    let fit = fit_svm(&labeled, svm)?;
    if fit.model.non_separable {
        log::warn!("calibration scores are not separable by the svm; some training images are misclassified");
    }
    Ok(Calibration { threshold, svm: fit.model, svm_params: *svm, images: scored.len() })
}

#[derive(Debug, Clone)]
pub struct VariantReport {
    pub report: EvalReport,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: u32,
    pub calibration: Calibration,
    pub model: DetectorModel<f32>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub fingerprint: String,
    pub split: Manifest,
    pub variants: Vec<VariantReport>,
}

fn both_classes(images: &[ScoredImage]) -> bool {
    Label::ALL.iter().all(|&c| images.iter().any(|s| s.label == c))
}

/// Train/val/test assignment for `cfg.split`; errors when train or test ends up empty.
pub fn assign_splits(manifest: &Manifest, cfg: &ExperimentConfig) -> Result<Manifest> {
    let m = match cfg.split {
        SplitMode::Protocol(n) => {
            let split = split_protocol(manifest, Protocol::from_number(n)?, cfg.seed)?;
            carve_validation(&split, cfg.val_fraction, cfg.seed)?
        }
        SplitMode::Generated => {
            split_generated(manifest, GeneratedSplitSizes::scaled_to(manifest.records.len()), cfg.seed)?
        }
        SplitMode::Manifest if manifest.in_split(Split::Val).is_empty() => {
            carve_validation(manifest, cfg.val_fraction, cfg.seed)?
        }
        SplitMode::Manifest => manifest.clone(),
    };
    for (split, what) in [(Split::Train, "training"), (Split::Test, "test")] {
        if m.in_split(split).is_empty() {
            return Err(Error::Protocol {
                protocol: cfg.split.as_string(),
                reason: format!("the split leaves no {what} images"),
            });
        }
    }
    Ok(m)
}

struct Variant {
    name: String,
    residual: bool,
    jpeg: Option<u8>,
}

fn variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let plain = |name: &str, residual| Variant { name: name.into(), residual, jpeg: None };
    match cfg.kind {
        ExperimentKind::Standard => vec![plain("test", cfg.arch.enable_residual)],
        ExperimentKind::Ablation => vec![plain("residual", true), plain("no-residual", false)],
        ExperimentKind::Compression => vec![
            plain("png", cfg.arch.enable_residual),
            Variant {
                name: format!("jpeg-q{}", cfg.jpeg_quality),
                residual: cfg.arch.enable_residual,
                jpeg: Some(cfg.jpeg_quality),
            },
        ],
    }
}

fn transform(images: &[LoadedImage], jpeg: Option<u8>) -> Result<Vec<LoadedImage>> {
    match jpeg {
        None => Ok(images.to_vec()),
        Some(q) => images.iter().map(|i| i.recompressed(q)).collect(),
    }
}

/// Split, train, calibrate on validation, evaluate on test; once per variant.
pub fn run_experiment(manifest: &Manifest, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint();
    let split = assign_splits(manifest, cfg).map_err(|e| e.in_stage("split"))?;
    let load = |s| load_images(&split, Some(s)).map_err(|e| e.in_stage("load"));
    let (train_imgs, val_imgs, test_imgs) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
    log::info!(
        "{} experiment: {} train, {} val, {} test images",
        cfg.kind.as_str(),
        train_imgs.len(),
        val_imgs.len(),
        test_imgs.len()
    );

    let mut out = Vec::new();
    for v in variants(cfg) {
        let arch = crate::net::ArchConfig { enable_residual: v.residual, ..cfg.arch.clone() };
        let p = arch.patch_size;
        let (tr, va, te) = (
            transform(&train_imgs, v.jpeg).map_err(|e| e.in_stage("load"))?,
            transform(&val_imgs, v.jpeg).map_err(|e| e.in_stage("load"))?,
            transform(&test_imgs, v.jpeg).map_err(|e| e.in_stage("load"))?,
        );
        let train_patches = patches_for_training(&tr, p, cfg.labeling).map_err(|e| e.in_stage("load"))?;
        let val_patches = patches_for_training(&va, p, cfg.labeling).map_err(|e| e.in_stage("load"))?;

        log::info!("variant {}: training on {} patches", v.name, train_patches.len());
        let model = build_model::<f32>(&arch, cfg.seed).map_err(|e| e.in_stage("train"))?;
        let train_cfg = crate::net::TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
        let val = (!val_patches.is_empty()).then_some(val_patches.as_slice());
        let outcome = train(model, &train_patches, val, &train_cfg).map_err(|e| e.in_stage("train"))?;

        let calibration = {
            let mut scored = score_images(&outcome.model, &va, cfg.labeling)?.images;
            if !both_classes(&scored) {
                log::warn!("validation split lacks a class; calibrating on the training images");
                scored = score_images(&outcome.model, &tr, cfg.labeling)?.images;
            }
            calibrate(&scored, &cfg.svm, &cfg.threshold_grid)
        }
        .map_err(|e| e.in_stage("calibrate"))?;

        let report = score_images(&outcome.model, &te, cfg.labeling)
            .and_then(|scored| {
                evaluate_scores(&v.name, &fingerprint, &scored, &calibration.aggregators(), cfg.aggregation)
            })
            .map(|mut r| {
                r.param_count = Some(outcome.model.param_count());
                r
            })
            .map_err(|e| e.in_stage("evaluate"))?;
        out.push(VariantReport {
            report,
            trace: outcome.trace,
            best_epoch: outcome.best_epoch,
            calibration,
            model: outcome.model,
        });
    }
    Ok(ExperimentReport { kind: cfg.kind, fingerprint, split, variants: out })
}

fn acc(r: &EvalReport, a: Aggregation) -> Option<f64> {
    r.image_accuracy(a)
}

impl ExperimentReport {
    /// Per-variant reports followed, for paired experiments, by a side-by-side summary.
    pub fn to_table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for v in &self.variants {
            out.push_str(&v.report.to_table());
            out.push('\n');
        }
        if self.variants.len() < 2 {
            return out;
        }
        let first = match self.kind {
            ExperimentKind::Compression => "format",
            _ => "variant",
        };
        let _ = writeln!(out, "{} summary  config {}", self.kind.as_str(), &self.fingerprint[..16]);
        let _ = writeln!(out, "{first:<14}{:>12}{:>10}{:>14}{:>10}", "parameters", "patch", "thresholding", "svm");
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        for v in &self.variants {
            let r = &v.report;
            let _ = writeln!(
                out,
                "{:<14}{:>12}{:>10}{:>14}{:>10}",
                r.name,
                r.param_count.map_or_else(|| "-".into(), |n| n.to_string()),
                f(Some(r.patch.accuracy)),
                f(acc(r, Aggregation::Threshold)),
                f(acc(r, Aggregation::Svm))
            );
        }
        let (a, b) = (&self.variants[0].report, &self.variants[1].report);
        let d = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => format!("{:+.2}", 100.0 * (y - x)),
            _ => "-".into(),
        };
        let dp = match (a.param_count, b.param_count) {
            (Some(x), Some(y)) => format!("{:+}", y as i64 - x as i64),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<14}{:>12}{:>10}{:>14}{:>10}",
            "delta",
            dp,
            d(Some(a.patch.accuracy), Some(b.patch.accuracy)),
            d(acc(a, Aggregation::Threshold), acc(b, Aggregation::Threshold)),
            d(acc(a, Aggregation::Svm), acc(b, Aggregation::Svm))
        );
        out
    }

    /// `(first minus second)` parameter counts of a paired run.
    pub fn param_count_delta(&self) -> Option<i64> {
        match self.variants.as_slice() {
            [a, b, ..] => Some(a.report.param_count? as i64 - b.report.param_count? as i64),
            _ => None,
        }
    }

    /// Every variant's decisions as JSON lines, tagged with the variant name.
    pub fn decisions_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for v in &self.variants {
            for d in &v.report.decisions {
                let mut value = serde_json::to_value(d)?;
                value["variant"] = serde_json::Value::String(v.report.name.clone());
                value["config"] = serde_json::Value::String(self.fingerprint.clone());
                out.push_str(&serde_json::to_string(&value)?);
                out.push('\n');
            }
        }
        Ok(out)
    }
}
