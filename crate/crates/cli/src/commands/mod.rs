pub mod edit;
pub mod eval;
pub mod filter;
pub mod gen;
pub mod stats;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::Result;
use editforge::error::Error;
use editforge::tensor::Tensor;

/// Loads a PNG referenced by a manifest, relative to `base`.
pub fn load_image(base: &Path, file: &str) -> Result<Tensor> {
    if file.trim().is_empty() {
        return Err(Error::Contract("record has no image file".into()).into());
    }
    let path = base.join(file);
    let bytes = std::fs::read(&path).map_err(|e| Error::Contract(format!("cannot read {}: {e}", path.display())))?;
    Ok(editforge::image::decode_png(&bytes)?)
}
