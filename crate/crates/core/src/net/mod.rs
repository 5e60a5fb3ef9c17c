//! The detector network: architecture, parameters, training and checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod model;
pub mod train;

pub use arch::{ArchConfig, ParamKind, ParamSpec, ShortcutPool};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{build_model, Backward, DetectorModel, ForwardCache, ForwardPass, ParamMap};
pub use train::{
    evaluate_loss, predict_batch, predict_patches, train, train_with_observer, EpochRecord, L1Scope, Objective,
    PatchPrediction, TrainConfig, TrainOutcome,
};

#[cfg(test)]
mod tests;
