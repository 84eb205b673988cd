//! Label corruption for controlled noisy-label experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_labels, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Flip to a uniformly random *different* class, so the realized
    /// corruption fraction matches the rate.
    Symmetric,
    /// Flip to `(label + 1) mod K`: structured class confusion.
    Asymmetric,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

/// Returns a corrupted copy of `labels`; the input is untouched. Each label
/// is flipped independently with probability `spec.rate`. Deterministic
/// given the seed.
pub fn inject_noise(
    labels: &[usize],
    spec: &NoiseSpec,
    n_classes: usize,
) -> Result<Vec<usize>, DataError> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(DataError::InvalidConfig(format!(
            "noise rate {} outside [0, 1]",
            spec.rate
        )));
    }
    if spec.kind == NoiseKind::Symmetric && spec.rate > 0.0 && n_classes < 2 {
        return Err(DataError::InvalidConfig(
            "symmetric noise needs at least 2 classes".into(),
        ));
    }
    check_labels(labels, n_classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let out = labels
        .iter()
        .map(|&y| {
            // One coin per label regardless of outcome keeps the stream layout
            // independent of the data.
            let flip = rng.random::<f64>() < spec.rate;
            if !flip {
                return y;
            }
            match spec.kind {
                NoiseKind::Symmetric => (y + rng.random_range(1..n_classes)) % n_classes,
                NoiseKind::Asymmetric => (y + 1) % n_classes,
            }
        })
        .collect();
    Ok(out)
}
