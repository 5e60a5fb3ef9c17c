//! Patch-based detection of retouched and generated face images.
//!
//! The pipeline tiles images into fixed-size patches, classifies each patch
//! with a small residual CNN trained under focal loss, and turns the share of
//! tampered patches into an image decision with either a threshold or an RBF
//! SVM.

pub mod aggregate;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod label;
pub mod net;
pub mod nn;
pub mod patch;
pub mod tensor;

pub use error::{Error, Result};
pub use label::Label;
pub use net::{build_model, ArchConfig, DetectorModel, TrainConfig};
pub use patch::{extract_patches, label_patches, LabelPolicy, LabeledPatch, PatchGrid, RegionMask};
pub use tensor::{Real, Tensor};
