//! Dataset directory I/O: a JSON manifest plus headerless binary blobs.
//!
//! The format is deliberately dumb so features exported from any language or
//! framework can be dropped in: f32 little-endian for features, u32
//! little-endian for labels, row-major, no padding.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, ModalityBlock, MultimodalDataset};

const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    n_samples: usize,
    n_classes: usize,
    modalities: Vec<ManifestModality>,
    labels_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_labels_file: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestModality {
    name: String,
    dim: usize,
    file: String,
}

/// Writes `manifest.json`, one `<name>.f32` file per modality, and the label
/// file(s) into `dir` (created if missing).
pub fn save_dataset(ds: &MultimodalDataset, dir: &Path) -> Result<(), DataError> {
    ds.validate()?;
    fs::create_dir_all(dir)?;

    let mut modalities = Vec::with_capacity(ds.n_modalities());
    for block in &ds.modalities {
        let file = format!("{}.f32", block.name);
        write_f32(&dir.join(&file), &block.features)?;
        modalities.push(ManifestModality {
            name: block.name.clone(),
            dim: block.dim(),
            file,
        });
    }
    write_u32(&dir.join("labels.u32"), &ds.noisy_labels)?;
    let true_labels_file = match &ds.true_labels {
        Some(t) => {
            write_u32(&dir.join("true_labels.u32"), t)?;
            Some("true_labels.u32".to_string())
        }
        None => None,
    };

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        n_samples: ds.n_samples(),
        n_classes: ds.n_classes,
        modalities,
        labels_file: "labels.u32".into(),
        true_labels_file,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Reads a dataset directory written by [`save_dataset`] (or assembled by
/// hand in the same format). Features come back as f64.
pub fn load_dataset(dir: &Path) -> Result<MultimodalDataset, DataError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DataError::UnsupportedVersion(manifest.version));
    }
    let n = manifest.n_samples;

    let mut blocks = Vec::with_capacity(manifest.modalities.len());
    for m in &manifest.modalities {
        let values = read_f32(&dir.join(&m.file), n * m.dim)?;
        let features = Array2::from_shape_vec((n, m.dim), values)
            .expect("length checked against shape");
        blocks.push(ModalityBlock { name: m.name.clone(), features });
    }
    let noisy_labels = read_u32(&dir.join(&manifest.labels_file), n)?;
    let true_labels = match &manifest.true_labels_file {
        Some(f) => Some(read_u32(&dir.join(f), n)?),
        None => None,
    };

    let ds = MultimodalDataset {
        n_classes: manifest.n_classes,
        modalities: blocks,
        noisy_labels,
        true_labels,
    };
    ds.validate()?;
    Ok(ds)
}

fn write_f32(path: &Path, values: &Array2<f64>) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f64>, DataError> {
    let bytes = fs::read(path)?;
    check_size(path, &bytes, expected_len as u64 * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn write_u32(path: &Path, values: &[usize]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_u32(path: &Path, expected_len: usize) -> Result<Vec<usize>, DataError> {
    let bytes = fs::read(path)?;
    check_size(path, &bytes, expected_len as u64 * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

fn check_size(path: &Path, bytes: &[u8], expected: u64) -> Result<(), DataError> {
    if bytes.len() as u64 != expected {
        return Err(DataError::FileSize {
            path: PathBuf::from(path),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn sample() -> MultimodalDataset {
        generate_synthetic(&SynthConfig {
            n_per_class: 6,
            n_classes: 3,
            dims: vec![5, 2],
            prototype_scale: 1.0,
            cluster_std: 0.2,
            modality_corruption: vec![0.1, 0.0],
            seed: 21,
        })
        .unwrap()
    }

    /// f32 files quantize features, so the round-trip target is the dataset
    /// with every feature squeezed through f32 once.
    fn quantized(ds: &MultimodalDataset) -> MultimodalDataset {
        let mut q = ds.clone();
        for b in &mut q.modalities {
            b.features.mapv_inplace(|v| v as f32 as f64);
        }
        q
    }

    #[test]
    fn round_trip_preserves_everything_up_to_f32() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, quantized(&ds));
    }

    #[test]
    fn saving_twice_writes_identical_bytes() {
        let ds = sample();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(&ds, d1.path()).unwrap();
        save_dataset(&ds, d2.path()).unwrap();
        for f in ["manifest.json", "m0.f32", "m1.f32", "labels.u32", "true_labels.u32"] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap(),
                "{f} differs"
            );
        }
    }

    #[test]
    fn truncated_feature_file_is_reported() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("m0.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::FileSize { expected, actual, .. }) => {
                assert_eq!(expected, actual + 4);
            }
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn label_equal_to_class_count_is_rejected() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        // Overwrite one label with K (valid u32, out of class range).
        let path = dir.path().join("labels.u32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(&3u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::LabelOutOfRange { index: 0, label: 3, .. })
        ));
    }

    #[test]
    fn manifest_dim_mismatch_is_a_size_error() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"dim\": 5", "\"dim\": 6");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::FileSize { .. })));
    }

    #[test]
    fn future_manifest_version_is_refused() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 2");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::UnsupportedVersion(2))));
    }

    #[test]
    fn missing_true_labels_round_trips_as_none() {
        let mut ds = sample();
        ds.true_labels = None;
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.true_labels, None);
    }
}
