//! Clean/noisy sample division from the per-sample loss distribution.
//!
//! Networks fit correctly-labeled samples faster than mislabeled ones, so
//! partway into training the per-sample losses form two lobes. A
//! two-component 1-D Gaussian mixture is fitted to the (usually min-max
//! normalized) losses with a fixed EM budget; the posterior of the
//! smaller-mean component is each sample's credibility, and samples whose
//! credibility clears a threshold form the clean set.
//!
//! Everything is deterministic: fixed percentile-based initialization, a
//! fixed iteration count, no randomness.

use serde::Serialize;
use thiserror::Error;

/// Variances never drop below this, preventing a component from collapsing
/// onto a single point and blowing up the likelihood.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DivideError {
    #[error("empty input")]
    Empty,
    #[error("need at least 2 points to fit a mixture, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("credibility {value} at index {index} outside [0, 1]")]
    BadCredibility { index: usize, value: f64 },
}

/// Fitted two-component 1-D Gaussian mixture.
#[derive(Debug, Clone, Serialize)]
pub struct GmmModel {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Index of the smaller-mean component; low loss reads as clean.
    pub clean_component: usize,
    /// Mixture log-likelihood after initialization and after each EM
    /// iteration (`em_iters + 1` entries). EM guarantees this is
    /// non-decreasing, which the tests assert.
    #[serde(skip)]
    pub log_likelihood: Vec<f64>,
}

/// Credibilities and the clean/noisy split they induce.
#[derive(Debug, Clone)]
pub struct Division {
    /// Posterior probability of the clean component, per sample.
    pub credibility: Vec<f64>,
    /// `credibility > threshold`, strictly; boundary samples count as noisy.
    pub clean_mask: Vec<bool>,
    pub threshold: f64,
}

impl Division {
    pub fn n_clean(&self) -> usize {
        self.clean_mask.iter().filter(|&&c| c).count()
    }

    pub fn n_noisy(&self) -> usize {
        self.clean_mask.len() - self.n_clean()
    }
}

/// Min-max normalization onto [0, 1]. A flat input maps to all 0.5, keeping
/// the downstream mixture fit well-defined.
pub fn normalize_losses(losses: &[f64]) -> Result<Vec<f64>, DivideError> {
    if losses.is_empty() {
        return Err(DivideError::Empty);
    }
    if let Some(i) = losses.iter().position(|v| !v.is_finite()) {
        return Err(DivideError::NonFinite(i));
    }
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; losses.len()]);
    }
    Ok(losses.iter().map(|&v| (v - min) / (max - min)).collect())
}

/// Fits the mixture with exactly `em_iters` EM iterations.
///
/// Initialization: means at the 25th and 75th percentiles, both variances at
/// the overall variance (floored), weights (0.5, 0.5). The E-step runs in the
/// log domain so extreme points cannot underflow both densities to zero.
pub fn gmm_fit(values: &[f64], em_iters: usize) -> Result<GmmModel, DivideError> {
    if values.len() < 2 {
        return Err(DivideError::TooFewPoints(values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DivideError::NonFinite(i));
    }
    let n = values.len();
    let nf = n as f64;

    let mean_all = values.iter().sum::<f64>() / nf;
    let var_all = (values.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / nf)
        .max(VARIANCE_FLOOR);
    let mut means = [percentile(values, 0.25), percentile(values, 0.75)];
    let mut variances = [var_all, var_all];
    let mut weights = [0.5, 0.5];

    let mut log_likelihood = Vec::with_capacity(em_iters + 1);
    log_likelihood.push(mixture_ll(values, &weights, &means, &variances));

    // Responsibilities of component 0; component 1 takes the complement.
    let mut resp = vec![0.0; n];
    for _ in 0..em_iters {
        for (r, &x) in resp.iter_mut().zip(values) {
            let l0 = weights[0].ln() + log_normal(x, means[0], variances[0]);
            let l1 = weights[1].ln() + log_normal(x, means[1], variances[1]);
            let mx = l0.max(l1);
            let e0 = (l0 - mx).exp();
            let e1 = (l1 - mx).exp();
            *r = e0 / (e0 + e1);
        }
        for t in 0..2 {
            let total: f64 = resp
                .iter()
                .map(|&r| if t == 0 { r } else { 1.0 - r })
                .sum();
            weights[t] = total / nf;
            if total < 1e-12 {
                // Component starved of responsibility: freeze its shape
                // instead of dividing by ~zero.
                continue;
            }
            let mu = values
                .iter()
                .zip(&resp)
                .map(|(&x, &r)| x * if t == 0 { r } else { 1.0 - r })
                .sum::<f64>()
                / total;
            let var = values
                .iter()
                .zip(&resp)
                .map(|(&x, &r)| (x - mu).powi(2) * if t == 0 { r } else { 1.0 - r })
                .sum::<f64>()
                / total;
            means[t] = mu;
            variances[t] = var.max(VARIANCE_FLOOR);
        }
        log_likelihood.push(mixture_ll(values, &weights, &means, &variances));
    }

    let clean_component = if means[0] <= means[1] { 0 } else { 1 };
    Ok(GmmModel { weights, means, variances, clean_component, log_likelihood })
}

/// Posterior probability of the clean (smaller-mean) component per value.
pub fn credibility(values: &[f64], gmm: &GmmModel) -> Vec<f64> {
    let c = gmm.clean_component;
    let o = 1 - c;
    values
        .iter()
        .map(|&x| {
            let lc = gmm.weights[c].ln() + log_normal(x, gmm.means[c], gmm.variances[c]);
            let lo = gmm.weights[o].ln() + log_normal(x, gmm.means[o], gmm.variances[o]);
            let mx = lc.max(lo);
            let ec = (lc - mx).exp();
            let eo = (lo - mx).exp();
            ec / (ec + eo)
        })
        .collect()
}

/// Thresholds credibilities into the clean/noisy partition. Strict
/// comparison: a sample exactly at the threshold is noisy.
pub fn divide(credibility: &[f64], threshold: f64) -> Result<Division, DivideError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(DivideError::BadThreshold(threshold));
    }
    for (index, &value) in credibility.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(DivideError::BadCredibility { index, value });
        }
    }
    Ok(Division {
        credibility: credibility.to_vec(),
        clean_mask: credibility.iter().map(|&g| g > threshold).collect(),
        threshold,
    })
}

fn log_normal(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / variance + variance.ln() + (2.0 * std::f64::consts::PI).ln())
}

fn mixture_ll(values: &[f64], weights: &[f64; 2], means: &[f64; 2], variances: &[f64; 2]) -> f64 {
    values
        .iter()
        .map(|&x| {
            let l0 = weights[0].ln() + log_normal(x, means[0], variances[0]);
            let l1 = weights[1].ln() + log_normal(x, means[1], variances[1]);
            let mx = l0.max(l1);
            mx + ((l0 - mx).exp() + (l1 - mx).exp()).ln()
        })
        .sum()
}

/// Linear-interpolation percentile (the numpy default): `q` in [0, 1].
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn normalize_flat_input_to_half() {
        assert_eq!(normalize_losses(&[2.0, 2.0, 2.0]).unwrap(), vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn normalize_is_the_affine_map() {
        assert_eq!(normalize_losses(&[0.0, 5.0, 10.0]).unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_preserves_order_and_hits_the_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 30.0 - 5.0).collect();
        let out = normalize_losses(&raw).unwrap();
        let min = out.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, 0.0);
        assert_eq!(max, 1.0);
        let mut raw_idx: Vec<usize> = (0..raw.len()).collect();
        let mut out_idx = raw_idx.clone();
        raw_idx.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
        out_idx.sort_by(|&a, &b| out[a].total_cmp(&out[b]));
        assert_eq!(raw_idx, out_idx);
    }

    #[test]
    fn normalize_rejects_nan() {
        assert!(matches!(
            normalize_losses(&[0.1, f64::NAN]),
            Err(DivideError::NonFinite(1))
        ));
    }

    #[test]
    fn identical_values_keep_symmetric_components() {
        let g = gmm_fit(&[0.4; 50], 10).unwrap();
        assert_eq!(g.means[0], g.means[1]);
        assert!((g.means[0] - 0.4).abs() < 1e-12);
        assert_eq!(g.variances, [VARIANCE_FLOOR, VARIANCE_FLOOR]);
        assert!((g.weights[0] - 0.5).abs() < 1e-12);
        assert!((g.weights[1] - 0.5).abs() < 1e-12);
    }

    fn bimodal(n_low: usize, n_high: usize, mu: (f64, f64), sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vec::with_capacity(n_low + n_high);
        for _ in 0..n_low {
            let g: f64 = rng.sample(StandardNormal);
            v.push((mu.0 + g * sd).clamp(0.0, 1.0));
        }
        for _ in 0..n_high {
            let g: f64 = rng.sample(StandardNormal);
            v.push((mu.1 + g * sd).clamp(0.0, 1.0));
        }
        v
    }

    #[test]
    fn recovers_an_unbalanced_mixture() {
        let v = bimodal(900, 100, (0.2, 0.9), 0.05, 12);
        let g = gmm_fit(&v, 10).unwrap();
        let clean_weight = g.weights[g.clean_component];
        assert!(
            (0.85..=0.95).contains(&clean_weight),
            "clean weight {clean_weight}"
        );
        assert!((g.means[g.clean_component] - 0.2).abs() < 0.02);
        assert!((g.means[1 - g.clean_component] - 0.9).abs() < 0.02);
    }

    #[test]
    fn log_likelihood_trace_has_init_plus_one_entry_per_iteration() {
        let v = bimodal(100, 100, (0.1, 0.8), 0.05, 3);
        let g = gmm_fit(&v, 10).unwrap();
        assert_eq!(g.log_likelihood.len(), 11);
        for w in g.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood decreased: {w:?}");
        }
    }

    #[test]
    fn credibility_is_half_under_identical_components() {
        let g = GmmModel {
            weights: [0.5, 0.5],
            means: [0.3, 0.3],
            variances: [0.01, 0.01],
            clean_component: 0,
            log_likelihood: vec![],
        };
        for c in credibility(&[0.0, 0.3, 0.9], &g) {
            assert!((c - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn credibility_separates_a_well_split_fit() {
        let v = bimodal(1000, 1000, (0.1, 0.8), 0.05, 7);
        let g = gmm_fit(&v, 10).unwrap();
        let c = credibility(&[0.1, 0.8], &g);
        assert!(c[0] > 0.99, "low-loss point credibility {}", c[0]);
        assert!(c[1] < 0.01, "high-loss point credibility {}", c[1]);
        for gv in credibility(&[0.05, 0.3, 0.55, 0.7, 0.95], &g) {
            assert!((0.0..=1.0).contains(&gv));
        }
    }

    #[test]
    fn credibility_is_monotone_when_variances_match() {
        let g = GmmModel {
            weights: [0.6, 0.4],
            means: [0.2, 0.7],
            variances: [0.02, 0.02],
            clean_component: 0,
            log_likelihood: vec![],
        };
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let c = credibility(&grid, &g);
        for w in c.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "credibility rose with loss: {w:?}");
        }
    }

    #[test]
    fn divide_applies_a_strict_threshold() {
        let d = divide(&[0.3, 0.5, 0.9], 0.5).unwrap();
        assert_eq!(d.clean_mask, vec![false, false, true]);
        assert_eq!(d.n_clean(), 1);
        assert_eq!(d.n_noisy(), 2);
    }

    #[test]
    fn divide_boundaries() {
        // Floored-variance Gaussians keep every posterior strictly positive,
        // so threshold 0 takes everything and threshold 1 nothing.
        let v = bimodal(50, 50, (0.1, 0.8), 0.05, 9);
        let g = gmm_fit(&v, 10).unwrap();
        let c = credibility(&v, &g);
        assert!(divide(&c, 0.0).unwrap().clean_mask.iter().all(|&m| m));
        assert!(divide(&c, 1.0).unwrap().clean_mask.iter().all(|&m| !m));
    }

    #[test]
    fn divide_rejects_bad_threshold() {
        assert!(matches!(divide(&[0.5], 1.5), Err(DivideError::BadThreshold(_))));
    }

    #[test]
    fn division_of_a_bimodal_mixture_matches_membership() {
        // End-to-end: generate two lobes, fit, divide at 0.5, compare with
        // the generating component.
        let v = bimodal(1000, 1000, (0.1, 0.8), 0.05, 4);
        let g = gmm_fit(&v, 10).unwrap();
        let c = credibility(&v, &g);
        let d = divide(&c, 0.5).unwrap();
        let correct = d
            .clean_mask
            .iter()
            .enumerate()
            .filter(|(i, &m)| m == (*i < 1000))
            .count();
        let acc = correct as f64 / v.len() as f64;
        assert!(acc > 0.98, "division accuracy {acc}");
    }

    #[test]
    fn too_few_points_is_an_error() {
        assert!(matches!(gmm_fit(&[0.5], 10), Err(DivideError::TooFewPoints(1))));
    }
}
