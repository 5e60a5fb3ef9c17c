//! Train/validation/test partitioning for the evaluation protocols.
//!
//! Every split is subject-disjoint: images sharing a subject id always land
//! in the same partition.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::io::{decode_image, encode_png};
use crate::data::manifest::{ImageFormat, ImageRecord, Manifest, Split, MAX_PROBE};
use crate::error::{Error, Result};
use crate::label::Label;

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;
/// Probe used for training under protocol 3.
pub const UNSEEN_TRAIN_PROBE: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Random subject-disjoint 50/50 split over the whole corpus.
    Mixed,
    /// 50/50 split performed independently within every probe set.
    PerProbe,
    /// Train on one probe set, test on all others.
    UnseenProbe,
}

impl Protocol {
    pub fn number(self) -> u8 {
        match self {
            Protocol::Mixed => 1,
            Protocol::PerProbe => 2,
            Protocol::UnseenProbe => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Protocol::Mixed),
            2 => Ok(Protocol::PerProbe),
            3 => Ok(Protocol::UnseenProbe),
            _ => Err(Error::Config(format!("protocol must be 1, 2 or 3, got {n}"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "protocol {}", self.number())
    }
}

/// Subjects of `records` (indices into the manifest) in seeded random order.
fn shuffled_subjects(manifest: &Manifest, records: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in records {
        by_subject.entry(manifest.records[i].subject_key()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_subject.into_values().collect();
    groups.shuffle(rng);
    groups
}

/// Greedily fills `first` with whole subjects up to `target` images; the rest go to `second`.
fn assign_subjects(
    manifest: &mut Manifest,
    records: &[usize],
    target: usize,
    first: Split,
    second: Split,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut taken = 0;
    for subject in shuffled_subjects(manifest, records, rng) {
        let split = if taken + subject.len() <= target {
            taken += subject.len();
            first
        } else {
            second
        };
        for i in subject {
            manifest.records[i].split = Some(split);
        }
    }
    taken
}

/// Half of each stratum (group, when every record carries one) to train, half to test.
fn halve(manifest: &mut Manifest, records: &[usize], rng: &mut ChaCha8Rng) {
    let stratified = records.iter().all(|&i| manifest.records[i].group.is_some());
    let mut strata: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    for &i in records {
        let key = if stratified { manifest.records[i].group.clone() } else { None };
        strata.entry(key).or_default().push(i);
    }
    // per-stratum targets carry any shortfall forward so the total stays near half
    let (mut seen, mut taken) = (0, 0);
    for members in strata.values() {
        seen += members.len();
        let target = (seen / 2).saturating_sub(taken);
        taken += assign_subjects(manifest, members, target, Split::Train, Split::Test, rng);
    }
}

fn require_probes(manifest: &Manifest, protocol: Protocol) -> Result<()> {
    if manifest.is_probe_structured() {
        Ok(())
    } else {
        Err(Error::Protocol {
            protocol: protocol.number().to_string(),
            reason: "the dataset has no probe identifiers".into(),
        })
    }
}

/// Assigns train/test splits; any existing assignment is overwritten.
pub fn split_protocol(manifest: &Manifest, protocol: Protocol, seed: u64) -> Result<Manifest> {
    let mut out = manifest.clone();
    if out.records.is_empty() {
        return Err(Error::Protocol { protocol: protocol.number().to_string(), reason: "the dataset is empty".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match protocol {
        Protocol::Mixed => {
            let all: Vec<usize> = (0..out.records.len()).collect();
            halve(&mut out, &all, &mut rng);
        }
        Protocol::PerProbe => {
            require_probes(&out, protocol)?;
            for probe in 1..=MAX_PROBE {
                let members: Vec<usize> =
                    (0..out.records.len()).filter(|&i| out.records[i].probe == Some(probe)).collect();
                halve(&mut out, &members, &mut rng);
            }
        }
        Protocol::UnseenProbe => {
            require_probes(&out, protocol)?;
            for r in &mut out.records {
                r.split = Some(if r.probe == Some(UNSEEN_TRAIN_PROBE) { Split::Train } else { Split::Test });
            }
            if out.in_split(Split::Train).is_empty() || out.in_split(Split::Test).is_empty() {
                return Err(Error::Protocol {
                    protocol: protocol.number().to_string(),
                    reason: format!("needs images both in probe {UNSEEN_TRAIN_PROBE} and in other probes"),
                });
            }
        }
    }
    Ok(out)
}

/// Moves about `fraction` of the training images, as whole subjects, to validation.
pub fn carve_validation(manifest: &Manifest, fraction: f64, seed: u64) -> Result<Manifest> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction must lie in [0, 1), got {fraction}")));
    }
    let mut out = manifest.clone();
    let train: Vec<usize> = (0..out.records.len()).filter(|&i| out.records[i].split == Some(Split::Train)).collect();
    let target = (fraction * train.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c69_6461_7465);
    assign_subjects(&mut out, &train, target, Split::Val, Split::Train, &mut rng);
    Ok(out)
}

/// Split sizes for the authentic-versus-generated experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratedSplitSizes {
    pub test_authentic: usize,
    pub test_generated: usize,
    pub val_per_class: usize,
}

impl Default for GeneratedSplitSizes {
    fn default() -> Self {
        Self { test_authentic: 1500, test_generated: 1000, val_per_class: 500 }
    }
}

/// Corpus size the default split sizes were chosen for.
pub const GENERATED_REFERENCE_TOTAL: usize = 35_500;

impl GeneratedSplitSizes {
    /// Scales the reference sizes to a corpus of `total` images, keeping at least one per slot.
    pub fn scaled_to(total: usize) -> Self {
        let d = Self::default();
        let s = |n: usize| ((n as f64 * total as f64 / GENERATED_REFERENCE_TOTAL as f64).round() as usize).max(1);
        Self {
            test_authentic: s(d.test_authentic),
            test_generated: s(d.test_generated),
            val_per_class: s(d.val_per_class),
        }
    }
}

/// Fixed-size test and validation sets per class; everything else trains.
pub fn split_generated(manifest: &Manifest, sizes: GeneratedSplitSizes, seed: u64) -> Result<Manifest> {
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (label, n_test) in [(Label::Authentic, sizes.test_authentic), (Label::Tampered, sizes.test_generated)] {
        let members: Vec<usize> = (0..out.records.len()).filter(|&i| out.records[i].label == label).collect();
        let need = n_test + sizes.val_per_class + 1;
        if members.len() < need {
            return Err(Error::Protocol {
                protocol: "generated".into(),
                reason: format!("{} {} images available, at least {need} needed", members.len(), label.as_str()),
            });
        }
        let mut shuffled = members;
        shuffled.shuffle(&mut rng);
        for (k, i) in shuffled.into_iter().enumerate() {
            out.records[i].split = Some(if k < n_test {
                Split::Test
            } else if k < n_test + sizes.val_per_class {
                Split::Val
            } else {
                Split::Train
            });
        }
    }
    Ok(out)
}

/// Re-encodes every image losslessly as PNG under `out_dir`, keeping masks and metadata.
pub fn convert_to_png(manifest: &Manifest, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut records: Vec<ImageRecord> = Vec::with_capacity(manifest.records.len());
    for (k, r) in manifest.records.iter().enumerate() {
        let stem = r.path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let rel = format!("{k:05}_{stem}.png");
        let img = decode_image(&manifest.resolve(&r.path))?;
        std::fs::write(out_dir.join(&rel), encode_png(&img)?)?;
        records.push(ImageRecord {
            path: rel.into(),
            format: ImageFormat::Png,
            mask: r.mask.as_ref().map(|m| std::path::absolute(manifest.resolve(m))).transpose()?,
            ..r.clone()
        });
    }
    Manifest::new(out_dir, records)
}
