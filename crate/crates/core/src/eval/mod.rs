//! Patch- and image-level metrics, report rendering, and the experiment runner.

mod config;
mod experiment;
mod metrics;
mod report;

pub use config::{Aggregation, ExperimentConfig, ExperimentKind, Labeling, SplitMode, CONFIG_KEYS};
pub use experiment::{
    assign_splits, calibrate, label_image_patches, load_images, patches_for_training, run_experiment, score_images,
    Calibration, ExperimentReport, LoadedImage, VariantReport,
};
pub use metrics::{evaluate_patches, ConfusionMatrix, MethodMetrics, PatchEval};
pub use report::{
    evaluate_images, evaluate_scores, Aggregators, EvalReport, ImageDecision, ProbeRow, ScoredImage, ScoredSet,
};
