//! Image decoding and encoding between files and `H x W x 3` tensors in `[0, 1]`.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageEncoder, ImageFormat as CodecFormat};

use crate::data::jpeg::encode_jpeg;
use crate::error::{Error, Result};
use crate::patch::RegionMask;
use crate::tensor::Tensor;

pub const COMPRESSION_QUALITY: u8 = 50;

fn to_tensor(img: DynamicImage) -> Result<Tensor<f32>> {
    // grayscale expands to three equal channels; alpha is dropped
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
    Tensor::from_vec(&[h, w, 3], data)
}

pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let decode_err = |reason: String| Error::Decode { path: path.to_path_buf(), reason };
    let bytes = std::fs::read(path).map_err(|e| decode_err(e.to_string()))?;
    let img = image::load_from_memory(&bytes).map_err(|e| decode_err(e.to_string()))?;
    to_tensor(img)
}

pub fn decode_bytes(bytes: &[u8]) -> Result<Tensor<f32>> {
    let img =
        image::load_from_memory(bytes).map_err(|e| Error::Decode { path: "<memory>".into(), reason: e.to_string() })?;
    to_tensor(img)
}

fn dims(image: &Tensor<f32>) -> Result<(usize, usize)> {
    match *image.shape() {
        [h, w, 3] => Ok((h, w)),
        ref s => Err(Error::Encode(format!("expected an H x W x 3 image, got {s:?}"))),
    }
}

/// Rounds `[0, 1]` values to 8-bit channels.
pub fn to_rgb8(image: &Tensor<f32>) -> Result<Vec<u8>> {
    dims(image)?;
    Ok(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
}

/// Snaps values onto the 8-bit grid, as a PNG round trip would.
pub fn quantize_8bit(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let bytes = to_rgb8(image)?;
    Tensor::from_vec(image.shape(), bytes.into_iter().map(|b| f32::from(b) / 255.0).collect())
}

pub fn encode_png(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = dims(image)?;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&to_rgb8(image)?, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out)
}

pub fn encode_jpeg_tensor(image: &Tensor<f32>, quality: u8) -> Result<Vec<u8>> {
    let (h, w) = dims(image)?;
    encode_jpeg(&to_rgb8(image)?, w, h, quality)
}

/// JPEG-encodes `image` and decodes the result.
pub fn recompress_jpeg(image: &Tensor<f32>, quality: u8) -> Result<(Vec<u8>, Tensor<f32>)> {
    let bytes = encode_jpeg_tensor(image, quality)?;
    let decoded = image::load_from_memory_with_format(&bytes, CodecFormat::Jpeg)
        .map_err(|e| Error::Decode { path: "<jpeg>".into(), reason: e.to_string() })?;
    Ok((bytes, to_tensor(decoded)?))
}

/// Mask images: any nonzero pixel marks a tampered location.
pub fn decode_mask(path: &Path) -> Result<RegionMask> {
    let img = image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    RegionMask::from_bits(h, w, gray.into_raw().into_iter().map(|v| v > 0).collect())
}

pub fn encode_mask(mask: &RegionMask) -> Result<Vec<u8>> {
    let px: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let mut out = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&px, mask.width() as u32, mask.height() as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}
