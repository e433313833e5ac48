//! Similarity kernels over embeddings and pixels.

use serde::Serialize;

use crate::error::{contract_err, shape_err, Result};
use crate::providers::EmbeddingVector;
use crate::tensor::Tensor;

/// Norm below which a vector counts as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Similarity {
    pub value: f64,
    /// A zero-norm operand forced the value to 0.
    pub degenerate: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_raw(a: &[f64], b: &[f64]) -> Result<Similarity> {
    if a.len() != b.len() {
        return Err(shape_err!("cosine of vectors with widths {} and {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(shape_err!("cosine of empty vectors"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(crate::error::Error::NumericDomain("non-finite embedding value".into()));
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa.sqrt() < DEGENERATE_NORM || bb.sqrt() < DEGENERATE_NORM {
        return Ok(Similarity { value: 0.0, degenerate: true });
    }
    // sqrt(x * x) == x exactly, so a vector's cosine with itself is exactly 1
    Ok(Similarity {
        value: (dot(a, b) / (aa * bb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<Similarity> {
    cosine_raw(&a.values, &b.values)
}

fn same_provider(what: &str, a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.provider != b.provider {
        return Err(contract_err!(
            "{what} compares embeddings from different providers ({} vs {})",
            a.provider,
            b.provider
        ));
    }
    Ok(())
}

/// Agreement of the edited image with its output caption.
pub fn clip_text_alignment(e_edited: &EmbeddingVector, e_caption: &EmbeddingVector) -> Result<Similarity> {
    same_provider("text alignment", e_edited, e_caption)?;
    cosine(e_edited, e_caption)
}

/// Similarity of the original and edited images.
pub fn clip_image_similarity(e_original: &EmbeddingVector, e_edited: &EmbeddingVector) -> Result<Similarity> {
    same_provider("image similarity", e_original, e_edited)?;
    cosine(e_original, e_edited)
}

/// Cosine between the image change and the caption change.
pub fn directional_similarity(
    e_original: &EmbeddingVector,
    e_edited: &EmbeddingVector,
    e_input: &EmbeddingVector,
    e_output: &EmbeddingVector,
) -> Result<Similarity> {
    same_provider("directional similarity", e_original, e_edited)?;
    same_provider("directional similarity", e_input, e_output)?;
    same_provider("directional similarity", e_original, e_input)?;
    if e_original.values.len() != e_edited.values.len() || e_input.values.len() != e_output.values.len() {
        return Err(shape_err!("directional similarity over mismatched widths"));
    }
    let di: Vec<f64> = e_edited.values.iter().zip(&e_original.values).map(|(a, b)| a - b).collect();
    let dt: Vec<f64> = e_output.values.iter().zip(&e_input.values).map(|(a, b)| a - b).collect();
    cosine_raw(&di, &dt)
}

/// Mean absolute per-channel difference of two images in `[0, 1]`.
pub fn l1_distance(original: &Tensor, edited: &Tensor) -> Result<f64> {
    if original.shape() != edited.shape() {
        return Err(shape_err!(
            "l1 distance between images of shapes {:?} and {:?}",
            original.shape(),
            edited.shape()
        ));
    }
    if original.numel() == 0 {
        return Err(shape_err!("l1 distance of empty images"));
    }
    let sum: f64 = original
        .data()
        .iter()
        .zip(edited.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / original.numel() as f64)
}
