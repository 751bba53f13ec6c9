//! Checkpoints: a JSON manifest (config plus the ordered parameter list with
//! shapes) and a blob of little-endian `f32` values in manifest order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encoder::SdiModel;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const FORMAT: &str = "sdi-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// File name of the blob, relative to the manifest.
    pub blob: String,
    pub params: Vec<ParamEntry>,
}

/// Manifest JSON text and blob bytes.
pub fn save_checkpoint(model: &SdiModel, blob_name: &str) -> Result<(String, Vec<u8>)> {
    let mut params = Vec::new();
    let mut blob = Vec::with_capacity(model.params().numel() * 4);
    for (_, name, t) in model.params().iter() {
        params.push(ParamEntry { name: name.to_string(), shape: t.shape().to_vec() });
        for &x in t.data() {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        blob: blob_name.into(),
        params,
    };
    Ok((serde_json::to_string_pretty(&manifest)?, blob))
}

pub fn load_checkpoint(manifest_json: &str, blob: &[u8]) -> Result<SdiModel> {
    let manifest: Manifest =
        serde_json::from_str(manifest_json).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let skeleton = SdiModel::zeroed(manifest.config.clone())?;
    if manifest.params.len() != skeleton.params().len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} parameters, configuration implies {}",
            manifest.params.len(),
            skeleton.params().len()
        )));
    }
    let total: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, manifest needs {}",
            blob.len(),
            total * 4
        )));
    }
    let mut params = skeleton.params().clone();
    let mut offset = 0;
    for ((id, name, t), entry) in skeleton.params().iter().zip(&manifest.params) {
        if entry.name != name {
            return Err(Error::Checkpoint(format!("parameter {} found where {name} was expected", entry.name)));
        }
        if entry.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for parameter {name}: manifest {:?}, configuration {:?}",
                entry.shape,
                t.shape()
            )));
        }
        let n = t.len();
        let data = blob[offset..offset + n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        offset += n * 4;
        params.set(id, Tensor::new(entry.shape.clone(), data)?)?;
    }
    skeleton.with_params(params)
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes via temp-file-then-rename so a crash never leaves a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Saves `<path>` (manifest) and `<path>` with extension `.bin` (blob).
pub fn save_to_path(model: &SdiModel, manifest_path: &Path) -> Result<()> {
    let blob_file = blob_path(manifest_path);
    let name = blob_file.file_name().and_then(|n| n.to_str()).unwrap_or("model.bin").to_string();
    let (manifest, blob) = save_checkpoint(model, &name)?;
    write_atomic(&blob_file, &blob)?;
    write_atomic(manifest_path, manifest.as_bytes())
}

pub fn load_from_path(manifest_path: &Path) -> Result<SdiModel> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let blob = std::fs::read(dir.join(&manifest.blob))?;
    load_checkpoint(&text, &blob)
}
