//! Image I/O, dataset manifests, synthetic corpora and protocol splits.

pub mod io;
pub mod jpeg;
pub mod manifest;
pub mod split;
pub mod synth;

pub use io::{decode_image, decode_mask, encode_png, quantize_8bit, recompress_jpeg, COMPRESSION_QUALITY};
pub use manifest::{ImageFormat, ImageRecord, Manifest, Split, MAX_PROBE};
pub use split::{
    carve_validation, convert_to_png, split_generated, split_protocol, GeneratedSplitSizes, Protocol,
    DEFAULT_VAL_FRACTION,
};
pub use synth::{generate_corpus, synth_authentic, synth_retouch, CorpusConfig, SynthAlterConfig};
