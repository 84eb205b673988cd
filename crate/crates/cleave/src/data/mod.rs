//! Dataset model and plumbing: per-modality feature blocks, labels, synthetic
//! data generation, label-noise injection, and binary file I/O.
//!
//! A dataset is M feature matrices (one per modality, all with N rows) plus a
//! noisy label per sample and, optionally, the true labels for metric
//! computation. True labels are never consumed by training code.
//!
//! On disk a dataset is a directory:
//!
//! ```text
//! dataset/
//!   manifest.json        version, sizes, modality names/dims, file names
//!   <modality>.f32       row-major little-endian f32, N*D_j values, no header
//!   labels.u32           little-endian u32, N values
//!   true_labels.u32      optional, same format
//! ```
//!
//! Features are stored at 32-bit precision; everything in memory is f64.

use ndarray::Array2;
use std::path::PathBuf;
use thiserror::Error;

mod io;
mod noise;
mod synth;

pub use io::{load_dataset, save_dataset};
pub use noise::{inject_noise, NoiseKind, NoiseSpec};
pub use synth::{generate_synthetic, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("label {label} at index {index} out of range for {n_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("non-finite feature value in modality {modality} at row {row}")]
    NonFinite { modality: String, row: usize },
    #[error("{}: expected {expected} bytes, found {actual}", path.display())]
    FileSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("unsupported manifest version {0} (this build reads version 1)")]
    UnsupportedVersion(u32),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One modality's features: N rows of a fixed-width vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBlock {
    pub name: String,
    pub features: Array2<f64>,
}

impl ModalityBlock {
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Feature blocks for every modality plus per-sample labels.
///
/// `noisy_labels` are the (possibly corrupted) training labels;
/// `true_labels`, when present, exist only so metrics can be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    pub n_classes: usize,
    pub modalities: Vec<ModalityBlock>,
    pub noisy_labels: Vec<usize>,
    pub true_labels: Option<Vec<usize>>,
}

impl MultimodalDataset {
    pub fn n_samples(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|b| b.dim()).collect()
    }

    /// Checks every structural invariant: at least one modality, K >= 2,
    /// N >= K, consistent row counts, finite features, labels in range.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.n_samples();
        if self.modalities.is_empty() {
            return Err(DataError::Invalid("no modalities".into()));
        }
        if self.n_classes < 2 {
            return Err(DataError::Invalid(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if n < self.n_classes {
            return Err(DataError::Invalid(format!(
                "{} samples < {} classes",
                n, self.n_classes
            )));
        }
        for block in &self.modalities {
            if block.dim() == 0 {
                return Err(DataError::Invalid(format!(
                    "modality {} has zero-width features",
                    block.name
                )));
            }
            if block.features.nrows() != n {
                return Err(DataError::Invalid(format!(
                    "modality {} has {} rows, expected {}",
                    block.name,
                    block.features.nrows(),
                    n
                )));
            }
            for (row, r) in block.features.rows().into_iter().enumerate() {
                if !r.iter().all(|v| v.is_finite()) {
                    return Err(DataError::NonFinite {
                        modality: block.name.clone(),
                        row,
                    });
                }
            }
        }
        check_labels(&self.noisy_labels, self.n_classes)?;
        if let Some(t) = &self.true_labels {
            if t.len() != n {
                return Err(DataError::Invalid(format!(
                    "{} true labels for {} samples",
                    t.len(),
                    n
                )));
            }
            check_labels(t, self.n_classes)?;
        }
        Ok(())
    }

    /// New dataset containing the given rows, in the given order.
    ///
    /// Panics if an index is out of bounds.
    pub fn subset(&self, indices: &[usize]) -> MultimodalDataset {
        MultimodalDataset {
            n_classes: self.n_classes,
            modalities: self
                .modalities
                .iter()
                .map(|b| ModalityBlock {
                    name: b.name.clone(),
                    features: b.features.select(ndarray::Axis(0), indices),
                })
                .collect(),
            noisy_labels: indices.iter().map(|&i| self.noisy_labels[i]).collect(),
            true_labels: self
                .true_labels
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<(), DataError> {
    for (index, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(DataError::LabelOutOfRange {
                index,
                label,
                n_classes,
            });
        }
    }
    Ok(())
}
