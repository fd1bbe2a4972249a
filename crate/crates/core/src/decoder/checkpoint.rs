//! Checkpoint directories: `config.json`, `manifest.json` (tensor names,
//! shapes and offsets) and `params.bin` (little-endian f32).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecoderConfig, DecoderModel, Layout, ParamEntry};
use crate::error::{Error, Result};

pub const PARAM_FORMAT: &str = "f32-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub total: usize,
    pub entries: Vec<ParamEntry>,
    /// Free-form metadata such as the context strategy.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub fn save_checkpoint(model: &DecoderModel<f32>, dir: &Path, meta: BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        format: PARAM_FORMAT.into(),
        total: model.num_params(),
        entries: model.layout().entries().to_vec(),
        meta,
    };
    let config_path = dir.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(model.config())?).map_err(|e| Error::io(&config_path, e))?;
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&manifest_path, e))?;
    let bytes: Vec<u8> = model.params().iter().flat_map(|p| p.to_le_bytes()).collect();
    let params_path = dir.join("params.bin");
    fs::write(&params_path, bytes).map_err(|e| Error::io(&params_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(DecoderModel<f32>, CheckpointManifest)> {
    let config_path = dir.join("config.json");
    let raw = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: DecoderConfig = serde_json::from_str(&raw)?;
    config.validate()?;
    let manifest_path = dir.join("manifest.json");
    let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&raw)?;
    if manifest.format != PARAM_FORMAT {
        return Err(Error::Format(format!("unsupported parameter format {}", manifest.format)));
    }
    let layout = Layout::new(&config);
    if manifest.entries != layout.entries() || manifest.total != layout.total() {
        return Err(Error::Format(
            "checkpoint manifest does not match the configured architecture".into(),
        ));
    }
    let params_path = dir.join("params.bin");
    let bytes = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if bytes.len() != 4 * layout.total() {
        return Err(Error::Format(format!(
            "params.bin holds {} bytes, expected {}",
            bytes.len(),
            4 * layout.total()
        )));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((DecoderModel::from_params(config, params)?, manifest))
}
