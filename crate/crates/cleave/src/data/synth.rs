//! Synthetic multimodal data with controllable class structure.
//!
//! Each class gets one random prototype vector per modality; samples are
//! prototypes plus isotropic Gaussian jitter. A per-modality corruption
//! probability swaps a sample's feature source to a different class's
//! prototype, which makes modalities complementary: a sample can be clean in
//! one view and misleading in another.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, ModalityBlock, MultimodalDataset};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    /// Feature width per modality; length determines M.
    pub dims: Vec<usize>,
    /// Prototype components are uniform in [-prototype_scale, +prototype_scale].
    pub prototype_scale: f64,
    /// Standard deviation of the isotropic jitter around the prototype.
    pub cluster_std: f64,
    /// Per-modality probability that a sample's feature comes from a random
    /// different class's prototype instead of its own.
    pub modality_corruption: Vec<f64>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_per_class == 0 {
            return Err(DataError::InvalidConfig("n_per_class must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(DataError::InvalidConfig("need at least 2 classes".into()));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(DataError::InvalidConfig(
                "dims must be nonempty with positive widths".into(),
            ));
        }
        if self.dims.len() != self.modality_corruption.len() {
            return Err(DataError::InvalidConfig(format!(
                "{} dims but {} corruption probabilities",
                self.dims.len(),
                self.modality_corruption.len()
            )));
        }
        if !(self.prototype_scale > 0.0) || !self.prototype_scale.is_finite() {
            return Err(DataError::InvalidConfig("prototype_scale must be > 0".into()));
        }
        // The zero limit is allowed: samples then sit exactly on prototypes.
        if !(self.cluster_std >= 0.0) || !self.cluster_std.is_finite() {
            return Err(DataError::InvalidConfig("cluster_std must be >= 0".into()));
        }
        for &p in &self.modality_corruption {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::InvalidConfig(format!(
                    "corruption probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Generates `n_per_class * n_classes` samples, class-major order, with
/// `noisy_labels == true_labels` (noise injection is a separate step).
/// Deterministic: the same config always yields byte-identical output.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<MultimodalDataset, DataError> {
    cfg.validate()?;
    let k = cfg.n_classes;
    let m = cfg.dims.len();
    let n = k * cfg.n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Draw order is fixed: all prototypes first (class-major, then modality),
    // then per sample and modality one corruption coin and the feature draw.
    let mut prototypes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut per_modality = Vec::with_capacity(m);
        for &d in &cfg.dims {
            let proto: Vec<f64> = (0..d)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * cfg.prototype_scale)
                .collect();
            per_modality.push(proto);
        }
        prototypes.push(per_modality);
    }

    let mut features: Vec<Array2<f64>> =
        cfg.dims.iter().map(|&d| Array2::zeros((n, d))).collect();
    let mut labels = Vec::with_capacity(n);
    for class in 0..k {
        for _ in 0..cfg.n_per_class {
            let i = labels.len();
            labels.push(class);
            for j in 0..m {
                let corrupted = rng.random::<f64>() < cfg.modality_corruption[j];
                let src = if corrupted {
                    (class + rng.random_range(1..k)) % k
                } else {
                    class
                };
                for d in 0..cfg.dims[j] {
                    let jitter: f64 = rng.sample(StandardNormal);
                    features[j][[i, d]] = prototypes[src][j][d] + jitter * cfg.cluster_std;
                }
            }
        }
    }

    let ds = MultimodalDataset {
        n_classes: k,
        modalities: features
            .into_iter()
            .enumerate()
            .map(|(j, f)| ModalityBlock {
                name: format!("m{j}"),
                features: f,
            })
            .collect(),
        noisy_labels: labels.clone(),
        true_labels: Some(labels),
    };
    debug_assert!(ds.validate().is_ok());
    Ok(ds)
}
