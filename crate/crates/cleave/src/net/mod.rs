//! Model parameters and forward computation.
//!
//! The model is deliberately small and fixed in shape: one two-layer
//! projection per modality mapping raw features onto the unit sphere in
//! embedding space, a classifier shared across modalities, a classifier on
//! the concatenated (fused) embedding, and a matrix of learnable class
//! centers used by the center-contrastive loss.
//!
//! Everything here is plain f64 ndarray math. Gradients are derived by hand
//! in [`backward`]; there is no autodiff and no hidden global state, so every
//! function is a pure, deterministic map from inputs to outputs.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod adam;
mod backward;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use backward::{backward, BatchSupervision, LossBreakdown, TermWeights};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

/// Added inside Euclidean norms so zero rows normalize to zero instead of
/// dividing by zero.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("modality index {index} out of range ({n_modalities} modalities)")]
    ModalityIndex { index: usize, n_modalities: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("excluding the self term needs at least 2 modalities, got {0}")]
    ExcludeSelfUnimodal(usize),
    #[error("non-finite values in {tensor}")]
    NonFinite { tensor: String },
}

/// Network shape: per-modality input widths plus the shared hidden, embedding
/// and class dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dims: Vec<usize>,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub n_modalities: usize,
}

impl ArchSpec {
    pub fn new(input_dims: Vec<usize>, hidden_dim: usize, embed_dim: usize, n_classes: usize) -> Self {
        let n_modalities = input_dims.len();
        ArchSpec { input_dims, hidden_dim, embed_dim, n_classes, n_modalities }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dims.is_empty() {
            return Err(NetError::InvalidArch("no modalities".into()));
        }
        if self.input_dims.len() != self.n_modalities {
            return Err(NetError::InvalidArch(format!(
                "{} input dims for {} modalities",
                self.input_dims.len(),
                self.n_modalities
            )));
        }
        if self.input_dims.contains(&0) || self.hidden_dim == 0 || self.embed_dim == 0 || self.n_classes == 0 {
            return Err(NetError::InvalidArch("all dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

/// One affine layer, stored as `out×in` weight plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    fn zeros(out: usize, inp: usize) -> Self {
        Affine { weight: Array2::zeros((out, inp)), bias: Array1::zeros(out) }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Two-layer projection for one modality: `x -> W2 relu(W1 x + b1) + b2`,
/// row-normalized afterwards by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable tensors. [`Gradients`] reuses this layout so optimizer and
/// checkpoint code can walk parameters and gradients uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub projections: Vec<Projection>,
    /// Classifier applied to every single-modality embedding (d -> K).
    pub shared: Affine,
    /// Classifier applied to the fused embedding (M*d -> K).
    pub multi: Affine,
    /// Raw class centers (K×d); unit-normalized wherever they are used.
    pub centers: Array2<f64>,
}

pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(arch: &ArchSpec) -> Self {
        ModelParams {
            projections: arch
                .input_dims
                .iter()
                .map(|&d_in| Projection {
                    w1: Array2::zeros((arch.hidden_dim, d_in)),
                    b1: Array1::zeros(arch.hidden_dim),
                    w2: Array2::zeros((arch.embed_dim, arch.hidden_dim)),
                    b2: Array1::zeros(arch.embed_dim),
                })
                .collect(),
            shared: Affine::zeros(arch.n_classes, arch.embed_dim),
            multi: Affine::zeros(arch.n_classes, arch.input_dims.len() * arch.embed_dim),
            centers: Array2::zeros((arch.n_classes, arch.embed_dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn n_modalities(&self) -> usize {
        self.projections.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.centers.nrows()
    }

    /// Stable (name, view) listing of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::with_capacity(self.projections.len() * 4 + 5);
        for (j, p) in self.projections.iter().enumerate() {
            out.push((format!("proj{j}.w1"), p.w1.view().into_dyn()));
            out.push((format!("proj{j}.b1"), p.b1.view().into_dyn()));
            out.push((format!("proj{j}.w2"), p.w2.view().into_dyn()));
            out.push((format!("proj{j}.b2"), p.b2.view().into_dyn()));
        }
        out.push(("shared.weight".into(), self.shared.weight.view().into_dyn()));
        out.push(("shared.bias".into(), self.shared.bias.view().into_dyn()));
        out.push(("multi.weight".into(), self.multi.weight.view().into_dyn()));
        out.push(("multi.bias".into(), self.multi.bias.view().into_dyn()));
        out.push(("centers".into(), self.centers.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::with_capacity(self.projections.len() * 4 + 5);
        for (j, p) in self.projections.iter_mut().enumerate() {
            out.push((format!("proj{j}.w1"), p.w1.view_mut().into_dyn()));
            out.push((format!("proj{j}.b1"), p.b1.view_mut().into_dyn()));
            out.push((format!("proj{j}.w2"), p.w2.view_mut().into_dyn()));
            out.push((format!("proj{j}.b2"), p.b2.view_mut().into_dyn()));
        }
        out.push(("shared.weight".into(), self.shared.weight.view_mut().into_dyn()));
        out.push(("shared.bias".into(), self.shared.bias.view_mut().into_dyn()));
        out.push(("multi.weight".into(), self.multi.weight.view_mut().into_dyn()));
        out.push(("multi.bias".into(), self.multi.bias.view_mut().into_dyn()));
        out.push(("centers".into(), self.centers.view_mut().into_dyn()));
        out
    }

    /// Name of the first tensor containing a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| !t.iter().all(|v| v.is_finite()))
            .map(|(name, _)| name)
    }
}

/// Xavier-uniform weights, zero biases, unit-norm Gaussian center rows.
/// Deterministic given the seed.
pub fn init_params(arch: &ArchSpec, seed: u64) -> Result<ModelParams, NetError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let xavier = |rng: &mut ChaCha8Rng, out: usize, inp: usize| {
        let limit = (6.0 / (out + inp) as f64).sqrt();
        let data: Vec<f64> = (0..out * inp)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect();
        Array2::from_shape_vec((out, inp), data).expect("shape matches data length")
    };

    let projections = arch
        .input_dims
        .iter()
        .map(|&d_in| Projection {
            w1: xavier(&mut rng, arch.hidden_dim, d_in),
            b1: Array1::zeros(arch.hidden_dim),
            w2: xavier(&mut rng, arch.embed_dim, arch.hidden_dim),
            b2: Array1::zeros(arch.embed_dim),
        })
        .collect();
    let shared = Affine {
        weight: xavier(&mut rng, arch.n_classes, arch.embed_dim),
        bias: Array1::zeros(arch.n_classes),
    };
    let multi = Affine {
        weight: xavier(&mut rng, arch.n_classes, arch.n_modalities * arch.embed_dim),
        bias: Array1::zeros(arch.n_classes),
    };
    let mut centers = Array2::<f64>::zeros((arch.n_classes, arch.embed_dim));
    for mut row in centers.rows_mut() {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        } else {
            row[0] = 1.0; // vanishingly unlikely, but keep the unit-norm contract
        }
    }

    Ok(ModelParams { projections, shared, multi, centers })
}

/// Row-wise `u / sqrt(|u|^2 + eps)`; returns the normalized rows and the
/// regularized norms (needed again on the backward pass).
pub(crate) fn row_normalize(u: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = (u * u)
        .sum_axis(Axis(1))
        .mapv(|s| (s + NORM_EPS).sqrt());
    let z = u / &norms.view().insert_axis(Axis(1));
    (z, norms)
}

/// Backward rule of row normalization: for `out = raw / norms` with `norms`
/// the eps-regularized row norms of `raw`,
/// `d_raw = d_out / n - raw * (d_out . raw) / n^3` per row.
pub(crate) fn normalize_backward(
    raw: &Array2<f64>,
    norms: &Array1<f64>,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    let dots = (d_out * raw).sum_axis(Axis(1));
    let n = norms.view().insert_axis(Axis(1));
    let scale = (&dots / &(norms * norms * norms)).insert_axis(Axis(1));
    d_out / &n - raw * &scale
}

pub(crate) struct EmbedCache {
    /// Pre-activation of the first layer (relu mask on the backward pass).
    pub pre1: Array2<f64>,
    pub h: Array2<f64>,
    /// Pre-normalization embedding.
    pub u: Array2<f64>,
    pub norms: Array1<f64>,
    pub z: Array2<f64>,
}

pub(crate) fn embed_with_cache(
    params: &ModelParams,
    features: ArrayView2<f64>,
    modality: usize,
) -> Result<EmbedCache, NetError> {
    let n_modalities = params.n_modalities();
    let proj = params
        .projections
        .get(modality)
        .ok_or(NetError::ModalityIndex { index: modality, n_modalities })?;
    if features.ncols() != proj.w1.ncols() {
        return Err(NetError::Shape(format!(
            "modality {modality} features are {} wide, projection expects {}",
            features.ncols(),
            proj.w1.ncols()
        )));
    }
    let pre1 = features.dot(&proj.w1.t()) + &proj.b1;
    let h = pre1.mapv(|v| v.max(0.0));
    let u = h.dot(&proj.w2.t()) + &proj.b2;
    let (z, norms) = row_normalize(&u);
    Ok(EmbedCache { pre1, h, u, norms, z })
}

/// Projects one modality's features to unit-norm embeddings.
pub fn forward_embed(
    params: &ModelParams,
    features: ArrayView2<f64>,
    modality: usize,
) -> Result<Array2<f64>, NetError> {
    Ok(embed_with_cache(params, features, modality)?.z)
}

/// Concatenates per-modality embeddings row-wise, modality order preserved.
pub fn fuse(embeds: &[Array2<f64>]) -> Result<Array2<f64>, NetError> {
    if embeds.is_empty() {
        return Err(NetError::Shape("fuse called with no modalities".into()));
    }
    let rows = embeds[0].nrows();
    if embeds.iter().any(|e| e.nrows() != rows) {
        return Err(NetError::Shape(format!(
            "fuse row counts differ: {:?}",
            embeds.iter().map(|e| e.nrows()).collect::<Vec<_>>()
        )));
    }
    let views: Vec<ArrayView2<f64>> = embeds.iter().map(|e| e.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| NetError::Shape(e.to_string()))
}

/// Logits of the shared (single-modality) classifier. No softmax.
pub fn classify_shared(params: &ModelParams, z: ArrayView2<f64>) -> Result<Array2<f64>, NetError> {
    if z.ncols() != params.shared.weight.ncols() {
        return Err(NetError::Shape(format!(
            "shared classifier expects width {}, got {}",
            params.shared.weight.ncols(),
            z.ncols()
        )));
    }
    Ok(params.shared.apply(z))
}

/// Logits of the fused-embedding classifier. No softmax.
pub fn classify_multi(params: &ModelParams, fused: ArrayView2<f64>) -> Result<Array2<f64>, NetError> {
    if fused.ncols() != params.multi.weight.ncols() {
        return Err(NetError::Shape(format!(
            "fused classifier expects width {}, got {}",
            params.multi.weight.ncols(),
            fused.ncols()
        )));
    }
    Ok(params.multi.apply(fused))
}
