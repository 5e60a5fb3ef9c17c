//! Patch-to-image aggregation.
//!
//! An image's feature is the percentage of its patches predicted tampered.
//! Two deciders consume it: a strict threshold picked by grid search, and a
//! one-dimensional RBF SVM.

mod svm;
mod threshold;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

pub use svm::{fit_svm, kkt_violation, svm_predict, train_svm, SvmFit, SvmModel, SvmParams};
pub use threshold::{classify_by_threshold, grid_search_threshold, ThresholdModel, ThresholdSearch, DEFAULT_GRID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub total_patches: usize,
    pub tampered_patches: usize,
    /// `100 * tampered / total`.
    pub output: f64,
}

impl ImageScore {
    pub fn new(image_id: &str, total_patches: usize, tampered_patches: usize) -> Result<Self> {
        if total_patches == 0 {
            return Err(Error::InvalidArgument(format!("image {image_id} has no patches")));
        }
        if tampered_patches > total_patches {
            return Err(Error::InvalidArgument(format!(
                "image {image_id}: {tampered_patches} tampered of {total_patches} patches"
            )));
        }
        // one rounding step: the numerator is an exact integer
        let output = (100 * tampered_patches) as f64 / total_patches as f64;
        Ok(Self { image_id: image_id.to_string(), total_patches, tampered_patches, output })
    }
}

/// Ground-truth-labeled score used to fit a decider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: ImageScore,
    pub label: Label,
}

pub fn tamper_ratio(image_id: &str, predictions: &[Label]) -> Result<ImageScore> {
    let tampered = predictions.iter().filter(|&&l| l == Label::Tampered).count();
    ImageScore::new(image_id, predictions.len(), tampered)
}

pub(crate) fn require_both_classes(scores: &[LabeledScore], what: &str) -> Result<()> {
    for class in Label::ALL {
        if !scores.iter().any(|s| s.label == class) {
            return Err(Error::InvalidArgument(format!("{what} needs both classes; no {class} scores given")));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) fn labeled(output_pairs: &[(f64, Label)]) -> Vec<LabeledScore> {
    output_pairs
        .iter()
        .enumerate()
        .map(|(i, &(output, label))| LabeledScore {
            score: ImageScore { image_id: format!("s{i}"), total_patches: 100, tampered_patches: 0, output },
            label,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Authentic as A, Tampered as T};

    #[test]
    fn ratio_examples() {
        assert_eq!(tamper_ratio("a", &[A; 16]).unwrap().output, 0.0);
        assert_eq!(tamper_ratio("b", &[T; 16]).unwrap().output, 100.0);
        let mut v = vec![A; 96];
        v.extend([T; 4]);
        let s = tamper_ratio("c", &v).unwrap();
        assert_eq!((s.total_patches, s.tampered_patches, s.output), (100, 4, 4.0));
        assert!(tamper_ratio("d", &[]).is_err());
    }

    #[test]
    fn ratio_is_scale_invariant() {
        for total in 1..60 {
            for t in 0..=total {
                let a = ImageScore::new("x", total, t).unwrap().output;
                let b = ImageScore::new("x", 2 * total, 2 * t).unwrap().output;
                assert_eq!(a, b);
                assert!((0.0..=100.0).contains(&a));
            }
        }
    }
}
