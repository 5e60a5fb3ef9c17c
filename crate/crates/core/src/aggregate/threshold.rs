use serde::{Deserialize, Serialize};

use super::{require_both_classes, ImageScore, LabeledScore};
use crate::error::{Error, Result};
use crate::label::Label;

/// Integer thresholds 1 through 10.
pub const DEFAULT_GRID: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];

/// Tampered iff the tamper percentage strictly exceeds `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub tau: f64,
}

impl Default for ThresholdModel {
    fn default() -> Self {
        Self { tau: 4.0 }
    }
}

pub fn classify_by_threshold(score: &ImageScore, model: &ThresholdModel) -> Label {
    if score.output > model.tau {
        Label::Tampered
    } else {
        Label::Authentic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub model: ThresholdModel,
    /// `(tau, accuracy)` for every grid point, in grid order.
    pub table: Vec<(f64, f64)>,
}

/// Picks the grid value with the highest accuracy on `scores`; ties go to the smaller value.
pub fn grid_search_threshold(scores: &[LabeledScore], grid: &[f64]) -> Result<ThresholdSearch> {
    require_both_classes(scores, "threshold search")?;
    if grid.is_empty() || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold grid must be finite and nonempty: {grid:?}")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let table: Vec<(f64, f64)> = sorted
        .iter()
        .map(|&tau| {
            let m = ThresholdModel { tau };
            let correct = scores.iter().filter(|s| classify_by_threshold(&s.score, &m) == s.label).count();
            (tau, correct as f64 / scores.len() as f64)
        })
        .collect();
    let mut best = table[0];
    for &(tau, acc) in &table[1..] {
        if acc > best.1 {
            best = (tau, acc);
        }
    }
    Ok(ThresholdSearch { model: ThresholdModel { tau: best.0 }, table })
}
