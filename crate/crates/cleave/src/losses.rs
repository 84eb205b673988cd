//! Loss functions: cross-entropy classification, per-sample multimodal loss
//! scores, center-contrastive semantic alignment, and instance-level
//! cross-modal alignment.
//!
//! Conventions shared by every loss here:
//! - logits are raw affine outputs; softmax happens inside the loss,
//!   always through a max-shifted log-sum-exp;
//! - embeddings are assumed unit-norm (the projections guarantee it);
//!   centers are stored raw and unit-normalized at the point of use;
//! - batch means divide by the number of terms actually summed, so losses
//!   stay comparable when routing shrinks the supervised subset.

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::net::{self, ModelParams, NetError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("excluding the self term needs at least 2 modalities, got {0}")]
    ExcludeSelfUnimodal(usize),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Softmax temperatures: `tau_c` for the center loss, `tau_m` for the
/// instance loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures {
    pub tau_c: f64,
    pub tau_m: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures { tau_c: 0.22, tau_m: 1.0 }
    }
}

impl Temperatures {
    pub fn validate(&self) -> Result<(), LossError> {
        for t in [self.tau_c, self.tau_m] {
            if !(t > 0.0) || !t.is_finite() {
                return Err(LossError::BadTemperature(t));
            }
        }
        Ok(())
    }
}

/// Balance weights for the total loss
/// `L = L_sem + lambda1 * L_inst + lambda2 * L_cls`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for w in [self.lambda1, self.lambda2] {
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::Shape(format!("loss weight {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Row-wise log-softmax, max-shifted for stability.
pub(crate) fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| v - mx);
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<(), LossError> {
    match labels.iter().find(|&&y| y >= n_classes) {
        Some(&label) => Err(LossError::LabelOutOfRange { label, n_classes }),
        None => Ok(()),
    }
}

/// Mean cross-entropy of hard labels against `logits` rows.
pub fn loss_cls(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64, LossError> {
    if logits.nrows() == 0 {
        return Err(LossError::EmptyBatch);
    }
    if labels.len() != logits.nrows() {
        return Err(LossError::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.nrows()
        )));
    }
    check_labels(labels, logits.ncols())?;
    let ls = log_softmax_rows(&logits.to_owned());
    let sum: f64 = labels.iter().enumerate().map(|(i, &y)| -ls[[i, y]]).sum();
    Ok(sum / labels.len() as f64)
}

/// Soft-label cross-entropy: mean over rows of `-sum_k q_k log softmax_k`.
/// Target rows are taken to be probability vectors; one-hot targets recover
/// [`loss_cls`].
pub fn loss_cls_soft(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64, LossError> {
    if logits.nrows() == 0 {
        return Err(LossError::EmptyBatch);
    }
    if logits.dim() != targets.dim() {
        return Err(LossError::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    let ls = log_softmax_rows(&logits.to_owned());
    let sum: f64 = targets
        .rows()
        .into_iter()
        .zip(ls.rows())
        .map(|(q, l)| -q.dot(&l))
        .sum();
    Ok(sum / logits.nrows() as f64)
}

/// Per-sample loss scores used for clean/noisy division, plus the fused
/// classifier's prediction probabilities (reused by label self-correction).
#[derive(Debug, Clone)]
pub struct SampleLosses {
    /// Fused-classifier CE plus the mean per-modality shared-classifier CE.
    pub total: Vec<f64>,
    pub fused_ce: Vec<f64>,
    /// Indexed `[modality][sample]`.
    pub modality_ce: Vec<Vec<f64>>,
    /// Row-wise softmax of the fused classifier, N×K.
    pub fused_probs: Array2<f64>,
}

/// Evaluation-mode scoring of every sample against the given labels:
/// `l_i = CE(fused classifier) + mean_j CE(shared classifier on modality j)`.
///
/// Callers doing clean/noisy division must pass the *original* noisy labels;
/// scoring against corrected labels would erase the signal the division
/// depends on.
pub fn sample_losses_multimodal(
    params: &ModelParams,
    features: &[Array2<f64>],
    labels: &[usize],
) -> Result<SampleLosses, LossError> {
    if features.len() != params.n_modalities() {
        return Err(LossError::Shape(format!(
            "{} feature blocks for {} modalities",
            features.len(),
            params.n_modalities()
        )));
    }
    let n = labels.len();
    if features.iter().any(|f| f.nrows() != n) {
        return Err(LossError::Shape(format!(
            "feature row counts {:?} do not match {} labels",
            features.iter().map(|f| f.nrows()).collect::<Vec<_>>(),
            n
        )));
    }
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    check_labels(labels, params.n_classes())?;

    let m = features.len();
    let embeds: Vec<Array2<f64>> = features
        .iter()
        .enumerate()
        .map(|(j, f)| net::forward_embed(params, f.view(), j))
        .collect::<Result<_, _>>()?;

    let fused = net::fuse(&embeds)?;
    let fused_ls = log_softmax_rows(&net::classify_multi(params, fused.view())?);
    let fused_ce: Vec<f64> = labels.iter().enumerate().map(|(i, &y)| -fused_ls[[i, y]]).collect();
    let fused_probs = fused_ls.mapv(f64::exp);

    let mut modality_ce = Vec::with_capacity(m);
    for z in &embeds {
        let ls = log_softmax_rows(&net::classify_shared(params, z.view())?);
        modality_ce.push(labels.iter().enumerate().map(|(i, &y)| -ls[[i, y]]).collect());
    }

    let total = (0..n)
        .map(|i| {
            let shared_mean: f64 =
                modality_ce.iter().map(|ce: &Vec<f64>| ce[i]).sum::<f64>() / m as f64;
            fused_ce[i] + shared_mean
        })
        .collect();

    Ok(SampleLosses { total, fused_ce, modality_ce, fused_probs })
}

/// Center-contrastive semantic loss: softmax over unit-normalized class
/// centers, averaged over modalities and routed samples.
///
/// `labels` holds one label slice per modality (they coincide in the training
/// pipeline, but the loss does not require it).
pub fn loss_sem(
    embeds: &[Array2<f64>],
    labels: &[&[usize]],
    centers: &Array2<f64>,
    tau_c: f64,
) -> Result<f64, LossError> {
    if !(tau_c > 0.0) {
        return Err(LossError::BadTemperature(tau_c));
    }
    if embeds.is_empty() {
        return Err(LossError::Shape("no modalities".into()));
    }
    if embeds.len() != labels.len() {
        return Err(LossError::Shape(format!(
            "{} embedding blocks vs {} label slices",
            embeds.len(),
            labels.len()
        )));
    }
    let b = embeds[0].nrows();
    if b == 0 {
        return Err(LossError::EmptyBatch);
    }
    let k = centers.nrows();
    let (cn, _) = normalized_centers(centers);
    let mut sum = 0.0;
    for (z, ys) in embeds.iter().zip(labels) {
        if z.nrows() != b || z.ncols() != centers.ncols() || ys.len() != b {
            return Err(LossError::Shape(format!(
                "embeddings {:?}, {} labels, centers {:?}",
                z.dim(),
                ys.len(),
                centers.dim()
            )));
        }
        check_labels(ys, k)?;
        let logits = z.dot(&cn.t()) / tau_c;
        let ls = log_softmax_rows(&logits);
        sum += ys.iter().enumerate().map(|(i, &y)| -ls[[i, y]]).sum::<f64>();
    }
    Ok(sum / (embeds.len() * b) as f64)
}

pub(crate) fn normalized_centers(centers: &Array2<f64>) -> (Array2<f64>, ndarray::Array1<f64>) {
    let norms = (centers * centers)
        .sum_axis(Axis(1))
        .mapv(|s| (s + net::NORM_EPS).sqrt());
    let cn = centers / &norms.view().insert_axis(Axis(1));
    (cn, norms)
}

/// Instance-alignment loss: for every view (sample i, modality j), the views
/// of the same sample form the positive set against the whole batch.
///
/// The self term (k = j) is part of the positive set as the definition is
/// written; `exclude_self` drops the anchor from both numerator and
/// denominator, which requires a second modality to leave the numerator
/// nonempty.
pub fn loss_inst(embeds: &[Array2<f64>], tau_m: f64, exclude_self: bool) -> Result<f64, LossError> {
    if !(tau_m > 0.0) {
        return Err(LossError::BadTemperature(tau_m));
    }
    let m = embeds.len();
    if m == 0 {
        return Err(LossError::Shape("no modalities".into()));
    }
    if exclude_self && m < 2 {
        return Err(LossError::ExcludeSelfUnimodal(m));
    }
    let b = embeds[0].nrows();
    if b == 0 {
        return Err(LossError::EmptyBatch);
    }
    let d = embeds[0].ncols();
    if embeds.iter().any(|z| z.nrows() != b || z.ncols() != d) {
        return Err(LossError::Shape(format!(
            "embedding blocks disagree: {:?}",
            embeds.iter().map(|z| z.dim()).collect::<Vec<_>>()
        )));
    }

    // Stack views as rows i*m + j, then one similarity matrix serves every
    // anchor as a column.
    let mut v = Array2::zeros((b * m, d));
    for (j, z) in embeds.iter().enumerate() {
        for i in 0..b {
            v.row_mut(i * m + j).assign(&z.row(i));
        }
    }
    let sims = v.dot(&v.t()) / tau_m;

    let mut sum = 0.0;
    for q in 0..b * m {
        let group = (q / m) * m..(q / m) * m + m;
        let col = sims.column(q);
        let mut mx = f64::NEG_INFINITY;
        for p in 0..b * m {
            if exclude_self && p == q {
                continue;
            }
            mx = mx.max(col[p]);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for p in 0..b * m {
            if exclude_self && p == q {
                continue;
            }
            let e = (col[p] - mx).exp();
            den += e;
            if group.contains(&p) {
                num += e;
            }
        }
        sum += den.ln() - num.ln();
    }
    Ok(sum / (m * b) as f64)
}

/// Total loss `L_sem + lambda1 * L_inst + lambda2 * L_cls`.
pub fn loss_total(sem: f64, inst: f64, cls: f64, weights: &LossWeights) -> f64 {
    sem + weights.lambda1 * inst + weights.lambda2 * cls
}
