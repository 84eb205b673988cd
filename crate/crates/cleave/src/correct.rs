//! Label self-correction via an exponential moving average of the fused
//! classifier's softmax outputs, plus the per-sample supervision routing
//! that decides which label (if any) each sample trains against.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::divide::Division;

#[derive(Debug, Error)]
pub enum CorrectError {
    #[error("EMA coefficient {0} outside [0, 1)")]
    BadCoefficient(f64),
    #[error("need n_classes >= 2, got {0}")]
    BadClassCount(usize),
    #[error("prediction matrix is {got:?}, state expects {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("prediction row {0} is not a probability vector (sums to {1})")]
    NotAProbability(usize, f64),
    #[error("non-finite prediction in row {0}")]
    NonFinite(usize),
    #[error("sample {0} has no accumulated estimate yet")]
    Uninitialized(usize),
    #[error("update mask has {got} entries for {expected} samples")]
    MaskLength { expected: usize, got: usize },
    #[error("division covers {got} samples, state holds {expected}")]
    DivisionLength { expected: usize, got: usize },
    #[error("plan covers {got} samples, state holds {expected}")]
    PlanLength { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Running per-sample class-probability estimates.
///
/// Each sample's row starts uninitialized; the first update copies the
/// prediction in, later updates blend `coeff * old + (1 - coeff) * new`.
#[derive(Debug, Clone)]
pub struct CorrectionState {
    pub ema: Array2<f64>,
    pub initialized: Vec<bool>,
    pub coeff: f64,
}

impl CorrectionState {
    pub fn new(n_samples: usize, n_classes: usize, coeff: f64) -> Result<Self, CorrectError> {
        if !(0.0..1.0).contains(&coeff) {
            return Err(CorrectError::BadCoefficient(coeff));
        }
        if n_classes < 2 {
            return Err(CorrectError::BadClassCount(n_classes));
        }
        Ok(Self {
            ema: Array2::zeros((n_samples, n_classes)),
            initialized: vec![false; n_samples],
            coeff,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.ema.nrows()
    }

    /// Argmax of the accumulated estimate; ties resolve to the smallest
    /// class index.
    pub fn hard_label(&self, sample: usize) -> Result<usize, CorrectError> {
        if !self.initialized[sample] {
            return Err(CorrectError::Uninitialized(sample));
        }
        let row = self.ema.row(sample);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        Ok(best)
    }
}

/// Blends one round of predictions into the state, returning the updated
/// copy. `update_mask`, when given, restricts which rows move; unmasked rows
/// carry over untouched and their predictions are not validated.
pub fn correct_labels(
    predictions: &Array2<f64>,
    state: &CorrectionState,
    update_mask: Option<&[bool]>,
) -> Result<CorrectionState, CorrectError> {
    if predictions.dim() != state.ema.dim() {
        return Err(CorrectError::Shape { expected: state.ema.dim(), got: predictions.dim() });
    }
    if let Some(mask) = update_mask {
        if mask.len() != state.n_samples() {
            return Err(CorrectError::MaskLength {
                expected: state.n_samples(),
                got: mask.len(),
            });
        }
    }
    let mut next = state.clone();
    for i in 0..state.n_samples() {
        if let Some(mask) = update_mask {
            if !mask[i] {
                continue;
            }
        }
        let p = predictions.row(i);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(CorrectError::NonFinite(i));
        }
        let sum: f64 = p.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CorrectError::NotAProbability(i, sum));
        }
        if next.initialized[i] {
            let coeff = next.coeff;
            let mut row = next.ema.row_mut(i);
            row.zip_mut_with(&p, |old, &new| *old = coeff * *old + (1.0 - coeff) * new);
        } else {
            next.ema.row_mut(i).assign(&p);
            next.initialized[i] = true;
        }
    }
    Ok(next)
}

/// Where a sample's supervision comes from in a given epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Warm-up phase: train on the given (possibly noisy) label.
    WarmupGiven,
    /// Divided clean: keep the given label.
    CleanGiven,
    /// Divided noisy with an accumulated estimate: train on the corrected
    /// hard label.
    NoisyCorrected,
    /// Divided noisy with nothing accumulated yet: no label terms, only the
    /// unsupervised instance-alignment term applies.
    InstanceOnly,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::WarmupGiven => "warmup_given",
            Route::CleanGiven => "clean_given",
            Route::NoisyCorrected => "noisy_corrected",
            Route::InstanceOnly => "instance_only",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SupervisionPlan {
    pub routes: Vec<Route>,
}

impl SupervisionPlan {
    pub fn all_warmup(n_samples: usize) -> Self {
        Self { routes: vec![Route::WarmupGiven; n_samples] }
    }
}

/// Decides each sample's route for the epoch. During warm-up (or whenever no
/// division exists) every sample trains on its given label.
pub fn route_supervision(
    division: Option<&Division>,
    state: &CorrectionState,
    epoch: usize,
    warmup_epochs: usize,
) -> Result<SupervisionPlan, CorrectError> {
    if epoch < warmup_epochs || division.is_none() {
        return Ok(SupervisionPlan::all_warmup(state.n_samples()));
    }
    let division = division.unwrap();
    if division.clean_mask.len() != state.n_samples() {
        return Err(CorrectError::DivisionLength {
            expected: state.n_samples(),
            got: division.clean_mask.len(),
        });
    }
    let routes = division
        .clean_mask
        .iter()
        .zip(&state.initialized)
        .map(|(&clean, &init)| match (clean, init) {
            (true, _) => Route::CleanGiven,
            (false, true) => Route::NoisyCorrected,
            (false, false) => Route::InstanceOnly,
        })
        .collect();
    Ok(SupervisionPlan { routes })
}

/// Writes the per-sample routing snapshot as CSV:
/// `sample_index,route,hard_label,true_label`, with the hard label empty
/// for samples that have no accumulated estimate yet and the true label
/// empty when unavailable.
pub fn export_correction(
    plan: &SupervisionPlan,
    state: &CorrectionState,
    true_labels: Option<&[usize]>,
    path: &Path,
) -> Result<(), CorrectError> {
    let n = state.n_samples();
    if plan.routes.len() != n {
        return Err(CorrectError::PlanLength { expected: n, got: plan.routes.len() });
    }
    if let Some(t) = true_labels {
        if t.len() != n {
            return Err(CorrectError::PlanLength { expected: n, got: t.len() });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sample_index,route,hard_label,true_label")?;
    for i in 0..n {
        let hard = match state.hard_label(i) {
            Ok(h) => h.to_string(),
            Err(_) => String::new(),
        };
        let truth = true_labels.map_or(String::new(), |t| t[i].to_string());
        writeln!(w, "{i},{},{hard},{truth}", plan.routes[i].as_str())?;
    }
    w.flush()?;
    Ok(())
}
