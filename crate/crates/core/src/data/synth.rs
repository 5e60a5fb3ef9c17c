//! Procedural stand-in corpus: textured face-like images and a localized
//! smoothing-plus-texture alteration that mimics cosmetic retouching.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::io::{encode_jpeg_tensor, encode_mask, encode_png, quantize_8bit};
use crate::data::manifest::{ImageFormat, ImageRecord, Manifest, MAX_PROBE};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::patch::RegionMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthAlterConfig {
    pub seed: u64,
    /// Box-blur radius; the window is `2 * radius - 1` pixels wide, so 1 leaves pixels untouched.
    pub radius: usize,
    /// Share of the image area covered by the altered rectangle.
    pub region_fraction: f64,
    /// Peak value of the added texture pattern.
    pub amplitude: f32,
}

impl Default for SynthAlterConfig {
    fn default() -> Self {
        Self { seed: 0, radius: 3, region_fraction: 0.5, amplitude: 0.03 }
    }
}

impl SynthAlterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::Config("smoothing radius must be at least 1".into()));
        }
        if !(self.region_fraction > 0.0 && self.region_fraction <= 1.0) {
            return Err(Error::Config(format!("region fraction must lie in (0, 1], got {}", self.region_fraction)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!("texture amplitude must be finite and >= 0, got {}", self.amplitude)));
        }
        Ok(())
    }

    /// Alteration strength for a probe set; higher probes alter more, and larger regions.
    pub fn for_probe(&self, probe: u8) -> Self {
        let k = f64::from(probe.clamp(1, MAX_PROBE));
        Self {
            radius: self.radius + (probe.saturating_sub(1) / 3) as usize,
            region_fraction: (self.region_fraction * (0.4 + 0.6 * k / f64::from(MAX_PROBE))).min(1.0),
            amplitude: self.amplitude * (0.5 + 0.5 * k as f32 / f32::from(MAX_PROBE)),
            ..*self
        }
    }
}

/// Smooth face-like layout with per-pixel sensor grain, on the 8-bit grid.
pub fn synth_authentic(height: usize, width: usize, seed: u64) -> Result<Tensor<f32>> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skin = [rng.gen_range(0.55..0.85f32), rng.gen_range(0.4..0.65), rng.gen_range(0.3..0.55)];
    let back = [rng.gen_range(0.1..0.9f32), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
    let (cy, cx) = (rng.gen_range(0.4..0.6f32) * height as f32, rng.gen_range(0.4..0.6f32) * width as f32);
    let (ry, rx) = (rng.gen_range(0.35..0.5f32) * height as f32, rng.gen_range(0.28..0.4f32) * width as f32);
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0f32) / height as f32,
                rng.gen_range(0.5..3.0f32) / width as f32,
                rng.gen_range(0.0..std::f32::consts::TAU),
                rng.gen_range(0.02..0.06f32),
            )
        })
        .collect();
    let grain = rng.gen_range(0.03..0.05f32);
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let d = ((y as f32 - cy) / ry).powi(2) + ((x as f32 - cx) / rx).powi(2);
            let face = (1.0 - (d - 1.0) * 8.0).clamp(0.0, 1.0);
            let shade: f32 = waves
                .iter()
                .map(|&(fy, fx, ph, a)| a * (std::f32::consts::TAU * (fy * y as f32 + fx * x as f32) + ph).sin())
                .sum();
            for ch in 0..3 {
                let base = face * skin[ch] + (1.0 - face) * back[ch];
                let noise = grain * (rng.gen::<f32>() + rng.gen::<f32>() - 1.0) * 1.7;
                data.push((base + shade + noise).clamp(0.0, 1.0));
            }
        }
    }
    quantize_8bit(&Tensor::from_vec(&[height, width, 3], data)?)
}

/// Box-blurs a random rectangle and overlays a faint texture there.
///
/// Pixels outside the returned mask are left bit-identical.
pub fn synth_retouch(image: &Tensor<f32>, cfg: &SynthAlterConfig) -> Result<(Tensor<f32>, RegionMask)> {
    cfg.validate()?;
    let (h, w) = match *image.shape() {
        [h, w, 3] => (h, w),
        ref s => return Err(Error::shape("synth_retouch", format!("expected H x W x 3, got {s:?}"))),
    };
    let area = cfg.region_fraction * (h * w) as f64;
    if area < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "region fraction {} of {h}x{w} is smaller than one pixel",
            cfg.region_fraction
        )));
    }
    let rw = ((w as f64 * cfg.region_fraction.sqrt()).round() as usize).clamp(1, w);
    let rh = ((area / rw as f64).round() as usize).clamp(1, h);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let top = rng.gen_range(0..=h - rh);
    let left = rng.gen_range(0..=w - rw);
    let mut mask = RegionMask::empty(h, w);
    mask.fill_rect(top, left, rh, rw);

    let (fy, fx) = (rng.gen_range(0.15..0.6f32), rng.gen_range(0.15..0.6f32));
    let phase = [rng.gen_range(0.0..std::f32::consts::TAU), rng.gen_range(0.0..std::f32::consts::TAU)];

    // summed-area table over the source for the blur
    let r = cfg.radius - 1;
    let src = image.data();
    let mut sat = vec![0f64; (h + 1) * (w + 1) * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let i = ((y + 1) * (w + 1) + x + 1) * 3 + ch;
                sat[i] =
                    f64::from(src[(y * w + x) * 3 + ch]) + sat[i - 3] + sat[i - (w + 1) * 3] - sat[i - (w + 2) * 3];
            }
        }
    }
    let mut out = image.clone();
    for y in top..top + rh {
        for x in left..left + rw {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let tex = cfg.amplitude * (fy * y as f32 + phase[0]).sin() * (fx * x as f32 + phase[1]).sin();
            for ch in 0..3 {
                let at = |yy: usize, xx: usize| sat[(yy * (w + 1) + xx) * 3 + ch];
                let v = if r == 0 {
                    src[(y * w + x) * 3 + ch]
                } else {
                    ((at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0)) / n) as f32
                };
                out[(y * w + x) * 3 + ch] = (v + tex).clamp(0.0, 1.0);
            }
        }
    }
    Ok((out, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Number of authentic/altered pairs.
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub alter: SynthAlterConfig,
    /// Spread pairs over probes 1..=7 with probe-scaled strength.
    pub probes: bool,
    pub format: ImageFormat,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 100,
            height: 128,
            width: 128,
            seed: 0,
            alter: SynthAlterConfig::default(),
            probes: true,
            format: ImageFormat::Png,
        }
    }
}

impl CorpusConfig {
    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Writes `count` authentic images, their altered twins and masks under
/// `dir`, plus `dir/manifest.tsv`. Each pair shares a subject id.
pub fn generate_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<Manifest> {
    cfg.alter.validate()?;
    if cfg.count == 0 {
        return Err(Error::Config("corpus count must be positive".into()));
    }
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(2 * cfg.count);
    let ext = cfg.format.extension();
    for i in 0..cfg.count {
        let img_seed: u64 = rng.gen();
        let alter_seed: u64 = rng.gen();
        // 211 of 325 subjects per probe are male in the reference data
        let group = if rng.gen_ratio(211, 325) { "male" } else { "female" };
        let probe = cfg.probes.then(|| (i % usize::from(MAX_PROBE)) as u8 + 1);
        let alter = SynthAlterConfig { seed: alter_seed, ..probe.map_or(cfg.alter, |p| cfg.alter.for_probe(p)) };

        let authentic = synth_authentic(cfg.height, cfg.width, img_seed)?;
        let (altered, mask) = synth_retouch(&authentic, &alter)?;
        let altered = quantize_8bit(&altered)?;
        let encode = |t: &Tensor<f32>| match cfg.format {
            ImageFormat::Png => encode_png(t),
            ImageFormat::Jpeg => encode_jpeg_tensor(t, 95),
        };
        let a_path = format!("images/{i:05}_authentic.{ext}");
        let t_path = format!("images/{i:05}_altered.{ext}");
        let m_path = format!("masks/{i:05}_altered.png");
        std::fs::write(dir.join(&a_path), encode(&authentic)?)?;
        std::fs::write(dir.join(&t_path), encode(&altered)?)?;
        std::fs::write(dir.join(&m_path), encode_mask(&mask)?)?;
        for (path, label, mask) in [(a_path, Label::Authentic, None), (t_path, Label::Tampered, Some(m_path))] {
            records.push(ImageRecord {
                path: path.into(),
                format: cfg.format,
                label,
                probe,
                mask: mask.map(Into::into),
                split: None,
                subject: Some(format!("s{i:05}")),
                group: Some(group.to_string()),
            });
        }
    }
    let manifest = Manifest::new(dir, records)?;
    manifest.write(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}
