use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::net::{predict_patches, DetectorModel};
use crate::patch::LabeledPatch;
use crate::tensor::Real;

/// 2x2 counts; rows are ground truth, columns predictions, both in class-index order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut m = Self::default();
        for (truth, pred) in pairs {
            m.add(truth, pred);
        }
        m
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, truth: Label) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    /// Overall accuracy, `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    /// Each row divided by its total. Rows without samples stay zero.
    pub fn normalized(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (r, row) in self.counts.iter().enumerate() {
            let n: u64 = row.iter().sum();
            if n > 0 {
                // last entry as the complement keeps the row sum at exactly 1
                out[r][0] = row[0] as f64 / n as f64;
                out[r][1] = 1.0 - out[r][0];
            }
        }
        out
    }

    /// Recall of one class, if any samples of it exist.
    pub fn class_accuracy(&self, class: Label) -> Option<f64> {
        let n = self.row_total(class);
        (n > 0).then(|| self.counts[class.index()][class.index()] as f64 / n as f64)
    }

    /// Mean recall over the classes present.
    pub fn balanced_accuracy(&self) -> f64 {
        let recalls: Vec<f64> = Label::ALL.iter().filter_map(|&c| self.class_accuracy(c)).collect();
        if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        }
    }

    /// Share of authentic samples predicted tampered.
    pub fn false_positive_rate(&self) -> Option<f64> {
        self.class_accuracy(Label::Authentic).map(|a| 1.0 - a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEval {
    pub confusion: ConfusionMatrix,
    pub normalized: [[f64; 2]; 2],
    pub accuracy: f64,
}

impl PatchEval {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self { normalized: confusion.normalized(), accuracy: confusion.accuracy(), confusion }
    }
}

/// Runs the model over labeled patches and tallies the confusion matrix.
pub fn evaluate_patches<T: Real>(model: &DetectorModel<T>, patches: &[LabeledPatch]) -> Result<PatchEval> {
    if patches.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty patch set".into()));
    }
    let truth: Vec<Label> = patches
        .iter()
        .map(|p| p.label.ok_or_else(|| Error::InvalidArgument(format!("patch of {} has no label", p.image_id))))
        .collect::<Result<_>>()?;
    let preds = predict_patches(model, patches)?;
    Ok(PatchEval::from_confusion(ConfusionMatrix::from_pairs(truth.into_iter().zip(preds.iter().map(|p| p.label)))))
}

/// Image-level metrics for one aggregation method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub confusion: ConfusionMatrix,
    /// Correct decisions over all images.
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub authentic_accuracy: Option<f64>,
    pub tampered_accuracy: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

impl MethodMetrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            accuracy: confusion.accuracy(),
            balanced_accuracy: confusion.balanced_accuracy(),
            authentic_accuracy: confusion.class_accuracy(Label::Authentic),
            tampered_accuracy: confusion.class_accuracy(Label::Tampered),
            false_positive_rate: confusion.false_positive_rate(),
            confusion,
        }
    }
}
