//! Checkpoints: one tensor file per parameter plus a TOML manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::DetectorConfig;
use super::model::Detector;
use crate::error::{Error, Result};
use crate::numerics::{load_tensor, save_tensor};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// SHA-256 of the TOML-encoded config.
    pub config_hash: String,
    pub config: DetectorConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Hex SHA-256 of a config's TOML encoding.
pub fn config_hash(cfg: &DetectorConfig) -> Result<String> {
    let text = toml::to_string(cfg).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn save_checkpoint(model: &Detector, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(model.store.len());
    for id in model.store.ids() {
        let name = model.store.name(id).to_string();
        let file = format!("{name}.tensor");
        let t = model.store.get(id);
        save_tensor(dir.join(&file), t)?;
        tensors.push(TensorEntry {
            name,
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        seed: model.seed,
        config_hash: config_hash(&model.cfg)?,
        config: model.cfg,
        tensors,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST))?;
    toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

/// Rebuilds the model from the manifest config and seed, then overwrites
/// every parameter from disk.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Detector> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if config_hash(&manifest.config)? != manifest.config_hash {
        return Err(Error::Format("config hash does not match the embedded config".into()));
    }
    let mut model = Detector::new(manifest.config, manifest.seed)?;
    if manifest.tensors.len() != model.store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            model.store.len()
        )));
    }
    for entry in &manifest.tensors {
        let id = model
            .store
            .find(&entry.name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {}", entry.name)))?;
        let t = load_tensor(dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() || t.shape() != model.store.get(id).shape() {
            return Err(Error::Shape(format!("parameter {} has shape {:?}", entry.name, t.shape())));
        }
        *model.store.get_mut(id) = t;
    }
    Ok(model)
}
