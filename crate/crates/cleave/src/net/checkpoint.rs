//! Parameter checkpoints: a JSON manifest describing the architecture and
//! tensor shapes, plus one little-endian f64 file per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ArchSpec, ModelParams, NetError};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0} (this build reads version 1)")]
    UnsupportedVersion(u32),
    #[error("{}: expected {expected} bytes, found {actual}", path.display())]
    FileSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("tensor {name}: manifest shape {expected:?}, architecture implies {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor {0} missing from manifest")]
    MissingTensor(String),
    #[error("manifest lists unknown tensor {0}")]
    UnknownTensor(String),
    #[error("non-finite values in tensor {0}")]
    NonFinite(String),
    #[error(transparent)]
    Arch(#[from] NetError),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    arch: ArchSpec,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

/// Writes `manifest.json` plus one `<tensor name>.f64` file per tensor into
/// `dir` (created if missing).
pub fn save_checkpoint(
    params: &ModelParams,
    arch: &ArchSpec,
    dir: &Path,
) -> Result<(), CheckpointError> {
    arch.validate()?;
    check_congruence(params, arch)?;
    fs::create_dir_all(dir)?;

    let mut entries = Vec::new();
    for (name, tensor) in params.tensors() {
        let file = format!("{name}.f64");
        let mut bytes = Vec::with_capacity(tensor.len() * 8);
        for &v in tensor.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        entries.push(TensorEntry {
            name,
            shape: tensor.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        arch: arch.clone(),
        tensors: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Reads a checkpoint directory back into parameters, verifying version,
/// shapes, file sizes, and finiteness.
pub fn load_checkpoint(dir: &Path) -> Result<(ArchSpec, ModelParams), CheckpointError> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(manifest.version));
    }
    manifest.arch.validate()?;

    let mut by_name: BTreeMap<String, TensorEntry> = manifest
        .tensors
        .into_iter()
        .map(|e| (e.name.clone(), e))
        .collect();

    let mut params = ModelParams::zeros(&manifest.arch);
    for (name, mut tensor) in params.tensors_mut() {
        let entry = by_name
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        if entry.shape != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: entry.shape,
                got: tensor.shape().to_vec(),
            });
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path)?;
        let expected = tensor.len() as u64 * 8;
        if bytes.len() as u64 != expected {
            return Err(CheckpointError::FileSize {
                path,
                expected,
                actual: bytes.len() as u64,
            });
        }
        for (slot, chunk) in tensor.iter_mut().zip(bytes.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if let Some(name) = by_name.into_keys().next() {
        return Err(CheckpointError::UnknownTensor(name));
    }
    if let Some(name) = params.first_non_finite() {
        return Err(CheckpointError::NonFinite(name));
    }
    Ok((manifest.arch, params))
}

fn check_congruence(params: &ModelParams, arch: &ArchSpec) -> Result<(), CheckpointError> {
    let reference = ModelParams::zeros(arch);
    for ((name, have), (_, want)) in params.tensors().into_iter().zip(reference.tensors()) {
        if have.shape() != want.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: want.shape().to_vec(),
                got: have.shape().to_vec(),
            });
        }
    }
    Ok(())
}
