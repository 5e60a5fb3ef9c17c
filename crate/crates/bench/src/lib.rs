//! Shared inputs for the benchmarks.

use altdetect::aggregate::{ImageScore, LabeledScore};
use altdetect::gradcheck::random_tensor;
use altdetect::{Label, Tensor};

pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    random_tensor(shape, seed).cast()
}

/// Image in [0, 1] with HxWx3 layout.
pub fn image(height: usize, width: usize, seed: u64) -> Tensor<f32> {
    tensor(&[height, width, 3], seed).map(|v| 0.5 + 0.5 * v)
}

/// Overlapping score clouds: authentic low, tampered high, `n` per class.
pub fn scores(n: usize) -> Vec<LabeledScore> {
    let total = 100;
    (0..2 * n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Authentic } else { Label::Tampered };
            let k = (i * 37) % 23;
            let tampered = if label == Label::Authentic { k } else { 100 - 3 * k };
            LabeledScore { score: ImageScore::new(&format!("img{i}"), total, tampered).expect("valid score"), label }
        })
        .collect()
}
