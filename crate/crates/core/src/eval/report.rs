use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Aggregation, Labeling};
use super::experiment::{score_images, LoadedImage};
use super::metrics::{ConfusionMatrix, MethodMetrics, PatchEval};
use crate::aggregate::{classify_by_threshold, svm_predict, ImageScore, SvmModel, ThresholdModel};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::net::DetectorModel;
use crate::tensor::Real;

/// Fitted image-level deciders; either may be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregators {
    pub threshold: Option<ThresholdModel>,
    pub svm: Option<SvmModel>,
}

/// One image's score after patch inference, with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub label: Label,
    pub probe: Option<u8>,
    pub score: ImageScore,
}

/// Cached patch inference over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub images: Vec<ScoredImage>,
    pub patch: PatchEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDecision {
    pub image_id: String,
    pub total: usize,
    pub tampered: usize,
    pub output: f64,
    pub label_threshold: Option<Label>,
    pub label_svm: Option<Label>,
    /// SVM decision value; positive leans tampered.
    pub margin: Option<f64>,
    pub truth: Label,
    pub probe: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub probe: u8,
    pub images: usize,
    pub threshold: Option<MethodMetrics>,
    pub svm: Option<MethodMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub fingerprint: String,
    pub param_count: Option<usize>,
    pub patch: PatchEval,
    pub tau: Option<f64>,
    pub threshold: Option<MethodMetrics>,
    pub svm: Option<MethodMetrics>,
    pub per_probe: Vec<ProbeRow>,
    pub decisions: Vec<ImageDecision>,
}

type ProbePick = fn(&ProbeRow) -> &Option<MethodMetrics>;

fn decide(s: &ScoredImage, aggs: &Aggregators) -> ImageDecision {
    let svm = aggs.svm.as_ref().map(|m| svm_predict(m, &s.score));
    ImageDecision {
        image_id: s.score.image_id.clone(),
        total: s.score.total_patches,
        tampered: s.score.tampered_patches,
        output: s.score.output,
        label_threshold: aggs.threshold.as_ref().map(|m| classify_by_threshold(&s.score, m)),
        label_svm: svm.map(|(l, _)| l),
        margin: svm.map(|(_, m)| m),
        truth: s.label,
        probe: s.probe,
    }
}

fn method_metrics<'a>(
    decisions: impl Iterator<Item = &'a ImageDecision> + Clone,
    pick: fn(&ImageDecision) -> Option<Label>,
) -> Option<MethodMetrics> {
    let pairs: Option<Vec<(Label, Label)>> = decisions.map(|d| pick(d).map(|p| (d.truth, p))).collect();
    pairs.map(|p| MethodMetrics::from_confusion(ConfusionMatrix::from_pairs(p)))
}

/// Applies the requested deciders to cached scores.
pub fn evaluate_scores(
    name: &str,
    fingerprint: &str,
    scored: &ScoredSet,
    aggs: &Aggregators,
    aggregation: Aggregation,
) -> Result<EvalReport> {
    if scored.images.is_empty() {
        return Err(Error::InvalidArgument("no images to evaluate".into()));
    }
    let mut used = aggs.clone();
    if aggregation.uses_threshold() {
        if used.threshold.is_none() {
            return Err(Error::Unfitted("threshold"));
        }
    } else {
        used.threshold = None;
    }
    if aggregation.uses_svm() {
        if used.svm.is_none() {
            return Err(Error::Unfitted("svm"));
        }
    } else {
        used.svm = None;
    }
    let decisions: Vec<ImageDecision> = scored.images.iter().map(|s| decide(s, &used)).collect();
    let thr = |d: &ImageDecision| d.label_threshold;
    let svm = |d: &ImageDecision| d.label_svm;

    let mut by_probe: BTreeMap<u8, Vec<&ImageDecision>> = BTreeMap::new();
    if decisions.iter().all(|d| d.probe.is_some()) {
        for d in &decisions {
            by_probe.entry(d.probe.expect("checked")).or_default().push(d);
        }
    }
    let per_probe = by_probe
        .into_iter()
        .map(|(probe, ds)| ProbeRow {
            probe,
            images: ds.len(),
            threshold: method_metrics(ds.iter().copied(), thr),
            svm: method_metrics(ds.iter().copied(), svm),
        })
        .collect();

    Ok(EvalReport {
        name: name.to_string(),
        fingerprint: fingerprint.to_string(),
        param_count: None,
        patch: scored.patch.clone(),
        tau: used.threshold.map(|t| t.tau),
        threshold: method_metrics(decisions.iter(), thr),
        svm: method_metrics(decisions.iter(), svm),
        per_probe,
        decisions,
    })
}

/// Patch inference once, then every requested decider on the cached scores.
pub fn evaluate_images<T: Real>(
    model: &DetectorModel<T>,
    images: &[LoadedImage],
    labeling: Labeling,
    aggs: &Aggregators,
    aggregation: Aggregation,
    fingerprint: &str,
) -> Result<EvalReport> {
    let scored = score_images(model, images, labeling)?;
    let mut report = evaluate_scores("test", fingerprint, &scored, aggs, aggregation)?;
    report.param_count = Some(model.param_count());
    Ok(report)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

impl EvalReport {
    /// Human-readable summary: patch confusion, then one row per method with
    /// per-probe columns when probe ids exist.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let short = &self.fingerprint[..self.fingerprint.len().min(16)];
        let _ = writeln!(out, "== {} ==  config {short}", self.name);
        if let Some(n) = self.param_count {
            let _ = writeln!(out, "parameters {n}");
        }
        let n = &self.patch.normalized;
        let c = &self.patch.confusion.counts;
        let _ = writeln!(out, "patch confusion (rows truth, columns predicted)");
        let _ = writeln!(out, "{:<12}{:>11}{:>11}", "", "authentic", "tampered");
        for (i, class) in Label::ALL.iter().enumerate() {
            let _ =
                writeln!(out, "{:<12}{:>11.4}{:>11.4}   ({} / {})", class.as_str(), n[i][0], n[i][1], c[i][0], c[i][1]);
        }
        let _ = writeln!(out, "patch accuracy {:.2}%", 100.0 * self.patch.accuracy);
        if let Some(tau) = self.tau {
            let _ = writeln!(out, "threshold tau {tau}");
        }
        let _ = writeln!(out);

        let mut header = format!("{:<16}", "image accuracy");
        for row in &self.per_probe {
            let _ = write!(header, "{:>9}", format!("P{}", row.probe));
        }
        let _ = write!(header, "{:>9}{:>10}{:>8}", "overall", "balanced", "FPR");
        let _ = writeln!(out, "{header}");
        let methods: [(&str, &Option<MethodMetrics>, ProbePick); 2] =
            [("Thresholding", &self.threshold, |r| &r.threshold), ("SVM", &self.svm, |r| &r.svm)];
        for (label, overall, pick) in methods {
            let Some(m) = overall else { continue };
            let mut line = format!("{label:<16}");
            for row in &self.per_probe {
                let _ = write!(line, "{:>9}", pct(pick(row).as_ref().map(|m| m.accuracy)));
            }
            let _ = write!(
                line,
                "{:>9}{:>10}{:>8}",
                pct(Some(m.accuracy)),
                pct(Some(m.balanced_accuracy)),
                pct(m.false_positive_rate)
            );
            let _ = writeln!(out, "{line}");
            for (class, get) in [
                ("  authentic", (|m: &MethodMetrics| m.authentic_accuracy) as fn(&MethodMetrics) -> Option<f64>),
                ("  tampered", |m: &MethodMetrics| m.tampered_accuracy),
            ] {
                let mut line = format!("{class:<16}");
                for row in &self.per_probe {
                    let _ = write!(line, "{:>9}", pct(pick(row).as_ref().and_then(get)));
                }
                let _ = write!(line, "{:>9}", pct(get(m)));
                let _ = writeln!(out, "{line}");
            }
        }
        out
    }

    /// One JSON object per image decision.
    pub fn decisions_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.decisions {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn image_accuracy(&self, aggregation: Aggregation) -> Option<f64> {
        match aggregation {
            Aggregation::Threshold => self.threshold.as_ref().map(|m| m.accuracy),
            Aggregation::Svm => self.svm.as_ref().map(|m| m.accuracy),
            Aggregation::Both => None,
        }
    }
}
