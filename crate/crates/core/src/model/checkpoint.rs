//! Checkpoint directories: one tensor dump per parameter plus a JSON
//! manifest recording names, shapes, stage tags and the config digest.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dump;
use crate::error::{config_err, shape_err, Error, Result};
use crate::param::StageTag;

use super::config::ModelConfig;
use super::denoiser::{AnySdModel, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT: &str = "editforge-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub stage: StageTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub config_digest: String,
    pub completed_stages: BTreeSet<Stage>,
    pub adapters_initialized: bool,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint manifest: {e}")))?;
        if m.format != FORMAT {
            return Err(Error::Parse(format!("unsupported checkpoint format {:?}", m.format)));
        }
        if m.config.digest() != m.config_digest {
            return Err(config_err!(
                "checkpoint config digest {} does not match its config ({})",
                m.config_digest,
                m.config.digest()
            ));
        }
        Ok(m)
    }
}

pub fn save_checkpoint(model: &AnySdModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(model.store.len());
    for (id, p) in model.store.iter() {
        let file = format!("{:04}.eftn", id.0);
        fs::write(dir.join(&file), dump::encode(&p.tensor))?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            file,
            shape: p.tensor.shape().to_vec(),
            stage: p.stage,
        });
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        config: model.config.clone(),
        config_digest: model.config.digest(),
        completed_stages: model.completed_stages.clone(),
        adapters_initialized: model.adapters_initialized,
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

/// Loads a checkpoint. With `expected` set, a config digest differing from
/// it refuses the load.
pub fn load_checkpoint(dir: &Path, expected: Option<&ModelConfig>) -> Result<AnySdModel> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest = Manifest::parse(&text)?;
    if let Some(exp) = expected {
        if exp.digest() != manifest.config_digest {
            return Err(config_err!(
                "checkpoint digest {} differs from the configured model {}",
                manifest.config_digest,
                exp.digest()
            ));
        }
    }
    let mut model = AnySdModel::new(manifest.config.clone())?;
    if manifest.tensors.len() != model.store.len() {
        return Err(shape_err!(
            "checkpoint holds {} tensors, model has {}",
            manifest.tensors.len(),
            model.store.len()
        ));
    }
    for entry in &manifest.tensors {
        if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
            return Err(Error::Parse(format!("illegal tensor file name {:?}", entry.file)));
        }
        let id = model.id(&entry.name)?;
        let bytes = fs::read(dir.join(&entry.file))?;
        let t = dump::decode(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", entry.file)))?;
        let p = model.store.get_mut(id);
        if t.shape() != p.tensor.shape() || entry.shape != t.shape() {
            return Err(shape_err!(
                "tensor {} has shape {:?}, expected {:?}",
                entry.name,
                t.shape(),
                p.tensor.shape()
            ));
        }
        if p.stage != entry.stage {
            return Err(Error::Parse(format!("tensor {} has the wrong stage tag", entry.name)));
        }
        p.tensor = t;
    }
    model.completed_stages = manifest.completed_stages;
    model.adapters_initialized = manifest.adapters_initialized;
    Ok(model)
}
