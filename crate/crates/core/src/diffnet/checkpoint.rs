//! Checkpoints: a JSON manifest next to a sidecar of little-endian `f64`
//! arrays, one per named tensor, concatenated in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest<S> {
    pub spec: S,
    pub seed: u64,
    pub step: u64,
    pub data_file: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn sidecar_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

pub fn save_checkpoint<S: Serialize + Clone, P: ParamStore>(
    manifest_path: impl AsRef<Path>,
    spec: &S,
    seed: u64,
    step: u64,
    params: &P,
) -> Result<Vec<PathBuf>> {
    let manifest_path = manifest_path.as_ref();
    let data_path = sidecar_path(manifest_path);
    let mut bytes = Vec::with_capacity(params.num_params() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensors() {
        for v in t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let manifest = CheckpointManifest {
        spec: spec.clone(),
        seed,
        step,
        data_file: data_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
    };
    fs::write(&data_path, bytes)?;
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(vec![manifest_path.to_path_buf(), data_path])
}

pub fn read_manifest<S: DeserializeOwned>(
    manifest_path: impl AsRef<Path>,
) -> Result<CheckpointManifest<S>> {
    let text = fs::read(manifest_path.as_ref())?;
    Ok(serde_json::from_slice(&text)?)
}

/// Loads tensor values into `params`; every name and length must match.
pub fn load_into<S, P: ParamStore>(
    manifest_path: impl AsRef<Path>,
    manifest: &CheckpointManifest<S>,
    params: &mut P,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let data_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.data_file);
    let bytes = fs::read(&data_path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{} is not a whole number of f64s",
            data_path.display()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut targets = params.tensors_mut();
    if targets.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, checkpoint has {}",
            targets.len(),
            manifest.tensors.len()
        )));
    }
    for ((name, dst), entry) in targets.iter_mut().zip(&manifest.tensors) {
        if *name != entry.name || dst.len() != entry.len {
            return Err(Error::Checkpoint(format!(
                "tensor {} (len {}) does not match checkpoint entry {} (len {})",
                name,
                dst.len(),
                entry.name,
                entry.len
            )));
        }
        let src = values
            .get(entry.offset..entry.offset + entry.len)
            .ok_or_else(|| {
                Error::Checkpoint(format!("tensor {} runs past end of data", entry.name))
            })?;
        dst.copy_from_slice(src);
    }
    Ok(())
}
