//! Non-overlapping patch tiling and patch-level labeling.
//!
//! Tiles are anchored at the top-left corner in row-major order; pixels in a
//! right or bottom remainder narrower than one patch are discarded.

use crate::error::{Error, Result};
use crate::label::Label;
use crate::tensor::Tensor;

/// One square tile cut from an image, with its grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    /// `None` until a labeling policy has been applied.
    pub label: Option<Label>,
    /// `P x P x C`, channel-last, values in `[0, 1]`.
    pub data: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub image_id: String,
    pub patch_size: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub rows: usize,
    pub cols: usize,
    pub patches: Vec<LabeledPatch>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<Label>> {
        self.patches.iter().map(|p| p.label).collect()
    }
}

/// Binary mask at image resolution; `true` marks a tampered pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("mask", format!("{} bits for {height}x{width}", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    /// Marks the axis-aligned rectangle `[top, top+h) x [left, left+w)`, clipped to the mask.
    pub fn fill_rect(&mut self, top: usize, left: usize, h: usize, w: usize) {
        for y in top..(top + h).min(self.height) {
            for x in left..(left + w).min(self.width) {
                self.bits[y * self.width + x] = true;
            }
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    fn count_in(&self, top: usize, left: usize, size: usize) -> usize {
        (top..top + size).map(|y| self.bits[y * self.width + left..][..size].iter().filter(|&&b| b).count()).sum()
    }
}

/// How patch labels are derived from image-level ground truth.
#[derive(Debug, Clone, Copy)]
pub enum LabelPolicy<'a> {
    /// Every patch inherits the image label.
    WholeImage(Label),
    /// A patch is tampered iff its tampered-pixel fraction is at least
    /// `coverage_threshold`; a threshold of 0 means any overlap at all.
    RegionMask { mask: &'a RegionMask, coverage_threshold: f64 },
}

fn image_dims(image: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape("extract_patches", format!("image must be HxWxC, got {s:?}"))),
    }
}

pub fn extract_patches(image_id: &str, image: &Tensor<f32>, patch_size: usize) -> Result<PatchGrid> {
    let (h, w, c) = image_dims(image)?;
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if h < patch_size || w < patch_size {
        return Err(Error::InvalidArgument(format!(
            "image {image_id} is {h}x{w}, smaller than patch size {patch_size}"
        )));
    }
    let (rows, cols) = (h / patch_size, w / patch_size);
    let row_len = patch_size * c;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for q in 0..cols {
            let mut data = Vec::with_capacity(patch_size * row_len);
            for y in r * patch_size..(r + 1) * patch_size {
                let start = (y * w + q * patch_size) * c;
                data.extend_from_slice(&image.data()[start..start + row_len]);
            }
            patches.push(LabeledPatch {
                image_id: image_id.to_string(),
                row: r,
                col: q,
                label: None,
                data: Tensor::from_vec(&[patch_size, patch_size, c], data)?,
            });
        }
    }
    Ok(PatchGrid { image_id: image_id.to_string(), patch_size, image_height: h, image_width: w, rows, cols, patches })
}

pub fn label_patches(mut grid: PatchGrid, policy: LabelPolicy<'_>) -> Result<PatchGrid> {
    match policy {
        LabelPolicy::WholeImage(label) => {
            for p in &mut grid.patches {
                p.label = Some(label);
            }
        }
        LabelPolicy::RegionMask { mask, coverage_threshold } => {
            if (mask.height, mask.width) != (grid.image_height, grid.image_width) {
                return Err(Error::shape(
                    "label_patches",
                    format!("mask {}x{} vs image {}x{}", mask.height, mask.width, grid.image_height, grid.image_width),
                ));
            }
            if !(0.0..=1.0).contains(&coverage_threshold) {
                return Err(Error::InvalidArgument(format!(
                    "coverage threshold must lie in [0, 1], got {coverage_threshold}"
                )));
            }
            let p = grid.patch_size;
            let area = (p * p) as f64;
            for patch in &mut grid.patches {
                let hits = mask.count_in(patch.row * p, patch.col * p, p);
                let tampered = hits > 0 && hits as f64 / area >= coverage_threshold;
                patch.label = Some(if tampered { Label::Tampered } else { Label::Authentic });
            }
        }
    }
    Ok(grid)
}

/// Stitches a complete grid back into a `rows*P x cols*P x C` image.
pub fn reassemble(grid: &PatchGrid) -> Result<Tensor<f32>> {
    let expected = grid.rows * grid.cols;
    if grid.patches.len() != expected || expected == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid {} has {} of {expected} patches",
            grid.image_id,
            grid.patches.len()
        )));
    }
    let p = grid.patch_size;
    let c = *grid.patches[0].data.shape().last().unwrap_or(&0);
    let (h, w) = (grid.rows * p, grid.cols * p);
    let mut out = vec![0f32; h * w * c];
    for (i, patch) in grid.patches.iter().enumerate() {
        if (patch.row, patch.col) != (i / grid.cols, i % grid.cols) {
            return Err(Error::InvalidArgument(format!(
                "grid {} patch {i} is at ({}, {}), expected ({}, {})",
                grid.image_id,
                patch.row,
                patch.col,
                i / grid.cols,
                i % grid.cols
            )));
        }
        if patch.data.shape() != [p, p, c] {
            return Err(Error::shape("reassemble", format!("patch {i} has shape {:?}", patch.data.shape())));
        }
        for y in 0..p {
            let dst = ((patch.row * p + y) * w + patch.col * p) * c;
            out[dst..dst + p * c].copy_from_slice(&patch.data.data()[y * p * c..(y + 1) * p * c]);
        }
    }
    Tensor::from_vec(&[h, w, c], out)
}
