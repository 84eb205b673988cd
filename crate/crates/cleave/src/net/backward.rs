//! Hand-derived reverse-mode gradients for the full training graph: per
//! modality `features -> affine -> relu -> affine -> row normalize`, then the
//! three loss heads (center-contrastive, instance alignment, classification)
//! on top of the embeddings.
//!
//! The graph is small and fixed, so the chain rule is spelled out instead of
//! pulling in an autodiff engine. Correctness is pinned by finite-difference
//! sweeps in the acceptance tests. Two pieces deserve a note:
//!
//! - row normalization `z = u / sqrt(|u|^2 + eps)` backpropagates as
//!   `du = dz/n - u * (dz . u) / n^3` with `n` the regularized norm; the same
//!   rule serves the use-time normalization of the class centers;
//! - the relu subgradient at exactly 0 is taken as 0.

use ndarray::{s, Array2, Axis};

use crate::losses::{log_softmax_rows, Temperatures};
use super::{embed_with_cache, fuse, normalize_backward, EmbedCache, Gradients, ModelParams, NetError};

/// Multipliers for the three loss terms in the scalar objective
/// `total = sem * L_sem + inst * L_inst + cls * L_cls`.
///
/// The training pipeline uses `{sem: 1, inst: lambda1, cls: lambda2}`;
/// zeroing a weight removes both the term and its gradient, which is what the
/// gradient checks exploit to test each term in isolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub sem: f64,
    pub inst: f64,
    pub cls: f64,
}

impl TermWeights {
    pub fn composite(lambda1: f64, lambda2: f64) -> Self {
        TermWeights { sem: 1.0, inst: lambda1, cls: lambda2 }
    }
}

/// Per-sample supervision for one batch, already resolved by the routing
/// stage: `None` keeps a sample out of that loss term. Every sample always
/// participates in the instance-alignment term.
#[derive(Debug, Clone)]
pub struct BatchSupervision {
    pub sem_labels: Vec<Option<usize>>,
    pub cls_labels: Vec<Option<usize>>,
}

impl BatchSupervision {
    /// Full supervision of every sample with its given label.
    pub fn uniform(labels: &[usize]) -> Self {
        BatchSupervision {
            sem_labels: labels.iter().map(|&y| Some(y)).collect(),
            cls_labels: labels.iter().map(|&y| Some(y)).collect(),
        }
    }
}

/// Unweighted loss-term values plus the weighted total that gradients were
/// taken against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub sem: f64,
    pub inst: f64,
    pub cls: f64,
    pub total: f64,
}

/// Evaluates the routed batch loss and its exact gradients for every
/// parameter tensor, centers included.
pub fn backward(
    params: &ModelParams,
    features: &[Array2<f64>],
    sup: &BatchSupervision,
    temps: &Temperatures,
    weights: &TermWeights,
    exclude_self_in_mg: bool,
) -> Result<(LossBreakdown, Gradients), NetError> {
    let m = params.n_modalities();
    let d = params.embed_dim();
    let k = params.n_classes();
    if features.len() != m {
        return Err(NetError::Shape(format!(
            "{} feature blocks for {m} modalities",
            features.len()
        )));
    }
    if exclude_self_in_mg && m < 2 {
        return Err(NetError::ExcludeSelfUnimodal(m));
    }
    let b = features[0].nrows();
    if b == 0 {
        return Err(NetError::EmptyBatch);
    }
    if features.iter().any(|f| f.nrows() != b) {
        return Err(NetError::Shape(format!(
            "batch sizes differ across modalities: {:?}",
            features.iter().map(|f| f.nrows()).collect::<Vec<_>>()
        )));
    }
    if sup.sem_labels.len() != b || sup.cls_labels.len() != b {
        return Err(NetError::Shape(format!(
            "supervision covers {}/{} samples for a batch of {b}",
            sup.sem_labels.len(),
            sup.cls_labels.len()
        )));
    }
    for y in sup.sem_labels.iter().chain(&sup.cls_labels).flatten() {
        if *y >= k {
            return Err(NetError::LabelOutOfRange { label: *y, n_classes: k });
        }
    }

    let caches: Vec<EmbedCache> = features
        .iter()
        .enumerate()
        .map(|(j, f)| embed_with_cache(params, f.view(), j))
        .collect::<Result<_, _>>()?;
    let zs: Vec<Array2<f64>> = caches.iter().map(|c| c.z.clone()).collect();
    let fused = fuse(&zs)?;

    let mut grads = params.zeros_like();
    // Gradients flowing into each modality's normalized embedding.
    let mut d_z: Vec<Array2<f64>> = (0..m).map(|_| Array2::zeros((b, d))).collect();

    // --- Classification term -------------------------------------------
    let routed_cls: Vec<(usize, usize)> = sup
        .cls_labels
        .iter()
        .enumerate()
        .filter_map(|(i, y)| y.map(|y| (i, y)))
        .collect();
    let mut cls_val = 0.0;
    if !routed_cls.is_empty() {
        let bc = routed_cls.len() as f64;
        let fused_ls = log_softmax_rows(&params.multi.apply(fused.view()));
        let shared_ls: Vec<Array2<f64>> =
            zs.iter().map(|z| log_softmax_rows(&params.shared.apply(z.view()))).collect();
        for &(i, y) in &routed_cls {
            cls_val -= fused_ls[[i, y]];
            for ls in &shared_ls {
                cls_val -= ls[[i, y]] / m as f64;
            }
        }
        cls_val /= bc;

        if weights.cls != 0.0 {
            // d(loss)/d(logits) = (softmax - onehot) * weight / count.
            let scale = weights.cls / bc;
            let mut d_fused_logits = Array2::zeros((b, k));
            for &(i, y) in &routed_cls {
                let p = fused_ls.row(i).mapv(f64::exp);
                let mut row = d_fused_logits.row_mut(i);
                row.assign(&(&p * scale));
                row[y] -= scale;
            }
            grads.multi.weight += &d_fused_logits.t().dot(&fused);
            grads.multi.bias += &d_fused_logits.sum_axis(Axis(0));
            let d_fused = d_fused_logits.dot(&params.multi.weight);
            for j in 0..m {
                d_z[j] += &d_fused.slice(s![.., j * d..(j + 1) * d]);
            }

            let shared_scale = scale / m as f64;
            for (j, ls) in shared_ls.iter().enumerate() {
                let mut d_logits = Array2::zeros((b, k));
                for &(i, y) in &routed_cls {
                    let p = ls.row(i).mapv(f64::exp);
                    let mut row = d_logits.row_mut(i);
                    row.assign(&(&p * shared_scale));
                    row[y] -= shared_scale;
                }
                grads.shared.weight += &d_logits.t().dot(&zs[j]);
                grads.shared.bias += &d_logits.sum_axis(Axis(0));
                d_z[j] += &d_logits.dot(&params.shared.weight);
            }
        }
    }

    // --- Center-contrastive term ----------------------------------------
    let routed_sem: Vec<(usize, usize)> = sup
        .sem_labels
        .iter()
        .enumerate()
        .filter_map(|(i, y)| y.map(|y| (i, y)))
        .collect();
    let mut sem_val = 0.0;
    if !routed_sem.is_empty() {
        let bs = routed_sem.len() as f64;
        let (cn, c_norms) = crate::losses::normalized_centers(&params.centers);
        let mut d_cn = Array2::zeros((k, d));
        for (j, z) in zs.iter().enumerate() {
            let ls = log_softmax_rows(&(z.dot(&cn.t()) / temps.tau_c));
            for &(i, y) in &routed_sem {
                sem_val -= ls[[i, y]];
            }
            if weights.sem != 0.0 {
                let scale = weights.sem / (m as f64 * bs);
                let mut d_logits = Array2::zeros((b, k));
                for &(i, y) in &routed_sem {
                    let p = ls.row(i).mapv(f64::exp);
                    let mut row = d_logits.row_mut(i);
                    row.assign(&(&p * scale));
                    row[y] -= scale;
                }
                d_z[j] += &(d_logits.dot(&cn) / temps.tau_c);
                d_cn += &(d_logits.t().dot(z) / temps.tau_c);
            }
        }
        sem_val /= m as f64 * bs;
        if weights.sem != 0.0 {
            grads.centers += &normalize_backward(&params.centers, &c_norms, &d_cn);
        }
    }

    // --- Instance-alignment term ------------------------------------------
    // Views stacked as rows i*m + j; one (b*m)^2 similarity matrix serves
    // every anchor as a column.
    let bm = b * m;
    let mut inst_val = 0.0;
    {
        let mut v = Array2::zeros((bm, d));
        for (j, z) in zs.iter().enumerate() {
            for i in 0..b {
                v.row_mut(i * m + j).assign(&z.row(i));
            }
        }
        let sims = v.dot(&v.t()) / temps.tau_m;
        let mut d_sims = Array2::zeros((bm, bm));
        let anchor_scale = weights.inst / (m as f64 * b as f64);
        for q in 0..bm {
            let group = (q / m) * m..(q / m) * m + m;
            let col = sims.column(q);
            let mut mx = f64::NEG_INFINITY;
            for p in 0..bm {
                if exclude_self_in_mg && p == q {
                    continue;
                }
                mx = mx.max(col[p]);
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for p in 0..bm {
                if exclude_self_in_mg && p == q {
                    continue;
                }
                let e = (col[p] - mx).exp();
                den += e;
                if group.contains(&p) {
                    num += e;
                }
            }
            inst_val += den.ln() - num.ln();
            if weights.inst != 0.0 {
                for p in 0..bm {
                    if exclude_self_in_mg && p == q {
                        continue;
                    }
                    let e = (col[p] - mx).exp();
                    let mut g = e / den;
                    if group.contains(&p) {
                        g -= e / num;
                    }
                    d_sims[[p, q]] = g * anchor_scale;
                }
            }
        }
        inst_val /= (m * b) as f64;
        if weights.inst != 0.0 {
            // sims = V V^T / tau, so dV = (G + G^T) V / tau.
            let d_v = (d_sims.dot(&v) + d_sims.t().dot(&v)) / temps.tau_m;
            for j in 0..m {
                for i in 0..b {
                    let mut row = d_z[j].row_mut(i);
                    row += &d_v.row(i * m + j);
                }
            }
        }
    }

    // --- Through the projections --------------------------------------
    for (j, cache) in caches.iter().enumerate() {
        let d_u = normalize_backward(&cache.u, &cache.norms, &d_z[j]);
        let proj = &params.projections[j];
        let g = &mut grads.projections[j];
        g.w2 += &d_u.t().dot(&cache.h);
        g.b2 += &d_u.sum_axis(Axis(0));
        let mut d_h = d_u.dot(&proj.w2);
        d_h.zip_mut_with(&cache.pre1, |dh, &pre| {
            if pre <= 0.0 {
                *dh = 0.0;
            }
        });
        g.w1 += &d_h.t().dot(&features[j]);
        g.b1 += &d_h.sum_axis(Axis(0));
    }

    let breakdown = LossBreakdown {
        sem: sem_val,
        inst: inst_val,
        cls: cls_val,
        total: weights.sem * sem_val + weights.inst * inst_val + weights.cls * cls_val,
    };
    for (name, value) in [
        ("loss_sem", breakdown.sem),
        ("loss_inst", breakdown.inst),
        ("loss_cls", breakdown.cls),
    ] {
        if !value.is_finite() {
            return Err(NetError::NonFinite { tensor: name.into() });
        }
    }
    if let Some(tensor) = grads.first_non_finite() {
        return Err(NetError::NonFinite { tensor: format!("gradient of {tensor}") });
    }
    Ok((breakdown, grads))
}
