//! RGB images as `[height, width, 3]` tensors with values in `[0, 1]`, and
//! PNG round-tripping.

use std::io::Cursor;
use std::path::Path;

use base64::Engine;
use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub fn dims(img: &Tensor) -> Result<(usize, usize)> {
    match img.shape() {
        [h, w, 3] => Ok((*h, *w)),
        s => Err(shape_err!("expected an [h, w, 3] image, got {s:?}")),
    }
}

pub fn pixel(img: &Tensor, y: usize, x: usize) -> [f64; 3] {
    let w = img.shape()[1];
    let o = (y * w + x) * 3;
    let d = img.data();
    [d[o], d[o + 1], d[o + 2]]
}

pub fn set_pixel(img: &mut Tensor, y: usize, x: usize, rgb: [f64; 3]) {
    let w = img.shape()[1];
    let o = (y * w + x) * 3;
    img.data_mut()[o..o + 3].copy_from_slice(&rgb);
}

/// Quantizes to 8 bits and encodes as PNG: `[h, w, 3]` as RGB, `[h, w]`
/// (a mask) as single-channel gray.
pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    let mut cursor = Cursor::new(&mut out);
    let written = match img.shape() {
        [h, w, 3] => RgbImage::from_raw(*w as u32, *h as u32, bytes)
            .expect("buffer sized from dims")
            .write_to(&mut cursor, ImageFormat::Png),
        [h, w] => GrayImage::from_raw(*w as u32, *h as u32, bytes)
            .expect("buffer sized from dims")
            .write_to(&mut cursor, ImageFormat::Png),
        s => return Err(shape_err!("cannot encode a tensor of shape {s:?} as png")),
    };
    written.map_err(|e| Error::Parse(format!("png encode: {e}")))?;
    Ok(out)
}

/// Decodes a PNG as a single-channel `[h, w]` mask (color inputs are
/// converted to luma).
pub fn decode_mask_png(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Parse(format!("png decode: {e}")))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(&[h as usize, w as usize], data)
}

pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Parse(format!("png decode: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

pub fn encode_png_base64(img: &Tensor) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(encode_png(img)?))
}

pub fn decode_png_base64(text: &str) -> Result<Tensor> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| Error::Parse(format!("base64: {e}")))?;
    decode_png(&bytes)
}

pub fn load(path: &Path) -> Result<Tensor> {
    decode_png(&std::fs::read(path)?)
}

pub fn save(img: &Tensor, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, encode_png(img)?)?)
}

/// Rounds every value onto the 8-bit grid, matching a PNG round trip.
pub fn quantize(img: &Tensor) -> Tensor {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Mean absolute difference per value.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    let d = a.sub(b)?;
    Ok(d.data().iter().map(|v| v.abs()).sum::<f64>() / d.numel() as f64)
}
