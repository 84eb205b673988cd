//! Orchestration of a full training run: warm-up, per-epoch loss scoring
//! and clean/noisy division, label correction, routed mini-batch training,
//! and held-out retrieval evaluation — plus the no-division ablation.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correct::{
    correct_labels, route_supervision, CorrectError, CorrectionState, Route, SupervisionPlan,
};
use crate::data::{DataError, MultimodalDataset};
use crate::divide::{
    credibility, divide, gmm_fit, normalize_losses, DivideError, Division, GmmModel,
};
use crate::eval::{correction_accuracy, division_accuracy, map_retrieval, EvalError};
use crate::losses::{sample_losses_multimodal, LossError, Temperatures};
use crate::net::{
    adam_step, backward, forward_embed, init_params, AdamState, ArchSpec, BatchSupervision,
    ModelParams, NetError, TermWeights,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Divide(#[from] DivideError),
    #[error(transparent)]
    Correct(#[from] CorrectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite per-sample loss for sample {sample} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, sample: usize },
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFiniteBatch { epoch: usize, batch: usize, what: String },
}

/// Training mode: the full divide/correct/align loop, or the ablation that
/// never divides and trains every sample on its given label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[serde(alias = "dac")]
    Full,
    BaselineNoDivision,
}

/// Which label, if any, feeds the classifier term for noisy-routed samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsOnNoisy {
    Corrected,
    Given,
    None,
}

fn d_warmup() -> usize { 5 }
fn d_batch() -> usize { 128 }
fn d_lr() -> f64 { 1e-3 }
fn d_hidden() -> usize { 64 }
fn d_embed() -> usize { 32 }
fn d_alpha() -> f64 { 0.5 }
fn d_tau_c() -> f64 { 0.22 }
fn d_tau_m() -> f64 { 1.0 }
fn d_mu() -> f64 { 0.9 }
fn d_lambda() -> f64 { 1.0 }
fn d_em_iters() -> usize { 10 }
fn d_true() -> bool { true }
fn d_cls_on_noisy() -> ClsOnNoisy { ClsOnNoisy::Corrected }
fn d_mode() -> TrainMode { TrainMode::Full }

/// Everything that parameterizes a run. JSON config files mirror these
/// field names; every field except `epochs` has a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "d_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    /// Epochs at whose start the learning rate is divided by 10.
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
    /// Credibility threshold for the clean set.
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_tau_c")]
    pub tau_c: f64,
    #[serde(default = "d_tau_m")]
    pub tau_m: f64,
    #[serde(default = "d_mu")]
    pub mu_ema: f64,
    #[serde(default = "d_lambda")]
    pub lambda1: f64,
    #[serde(default = "d_lambda")]
    pub lambda2: f64,
    #[serde(default = "d_em_iters")]
    pub em_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exclude_self_in_mg: bool,
    /// Restrict the EMA update to noisy-routed samples instead of all.
    #[serde(default)]
    pub ema_update_noisy_only: bool,
    #[serde(default = "d_cls_on_noisy")]
    pub cls_on_noisy: ClsOnNoisy,
    /// Fit the mixture to min-max normalized losses (default) or raw ones.
    #[serde(default = "d_true")]
    pub normalize_losses_for_gmm: bool,
    #[serde(default = "d_mode")]
    pub mode: TrainMode,
}

impl TrainConfig {
    /// A config with every field at its default except the epoch count.
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            warmup_epochs: d_warmup(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            lr_decay_epochs: Vec::new(),
            hidden_dim: d_hidden(),
            embed_dim: d_embed(),
            alpha: d_alpha(),
            tau_c: d_tau_c(),
            tau_m: d_tau_m(),
            mu_ema: d_mu(),
            lambda1: d_lambda(),
            lambda2: d_lambda(),
            em_iters: d_em_iters(),
            seed: 0,
            exclude_self_in_mg: false,
            ema_update_noisy_only: false,
            cls_on_noisy: d_cls_on_noisy(),
            normalize_losses_for_gmm: d_true(),
            mode: d_mode(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return fail(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return fail("hidden_dim and embed_dim must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        Temperatures { tau_c: self.tau_c, tau_m: self.tau_m }
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.mu_ema) {
            return fail(format!("mu_ema {} outside [0, 1)", self.mu_ema));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if self.em_iters == 0 {
            return fail("em_iters must be >= 1".into());
        }
        Ok(())
    }

    fn temperatures(&self) -> Temperatures {
        Temperatures { tau_c: self.tau_c, tau_m: self.tau_m }
    }

    fn term_weights(&self) -> TermWeights {
        TermWeights::composite(self.lambda1, self.lambda2)
    }
}

/// One epoch's metrics; serialized as one JSON line of `metrics.jsonl`.
/// Deliberately carries no wall-clock data so repeated runs emit identical
/// streams.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Test-split retrieval mAP per ordered modality pair, keyed
    /// `"{query}->{gallery}"`. Empty when the held-out split is empty.
    pub map: BTreeMap<String, f64>,
    pub division_accuracy: Option<f64>,
    pub correction_accuracy: Option<f64>,
    pub loss_sem: f64,
    pub loss_inst: f64,
    pub loss_cls: f64,
    pub loss_total: f64,
    /// Train-split samples routed as clean this epoch (everything during
    /// warm-up and in the no-division ablation).
    pub n_clean: usize,
    pub n_noisy: usize,
    pub gmm: Option<GmmModel>,
}

/// Full outcome of a training run.
#[derive(Debug)]
pub struct RunReport {
    pub config: TrainConfig,
    pub arch: ArchSpec,
    pub epochs: Vec<EpochMetrics>,
    pub wall_time_secs: f64,
    pub final_params: ModelParams,
    pub final_division: Option<Division>,
    pub final_correction: CorrectionState,
    /// Dataset row indices of the training split, in training order.
    pub train_indices: Vec<usize>,
    /// Dataset row indices of the held-out evaluation split.
    pub test_indices: Vec<usize>,
}

/// Per-epoch view handed to an observer: the metrics line plus the raw
/// division and routing snapshots (present after warm-up in full mode).
pub struct EpochRecord<'a> {
    pub metrics: &'a EpochMetrics,
    pub division: Option<DivisionRecord<'a>>,
    pub routing: Option<RoutingRecord<'a>>,
}

pub struct DivisionRecord<'a> {
    /// Min-max normalized per-sample losses (always normalized here, even
    /// when the mixture was fitted to raw losses).
    pub normalized_losses: &'a [f64],
    pub division: &'a Division,
    pub label_is_true: Option<&'a [bool]>,
}

pub struct RoutingRecord<'a> {
    pub plan: &'a SupervisionPlan,
    pub state: &'a CorrectionState,
    pub true_labels: Option<&'a [usize]>,
}

// Fixed stream separators for deriving independent RNG seeds from the run
// seed (splitmix64 finalizer).
const SEED_SPLIT: u64 = 0;
const SEED_INIT: u64 = 1;
const SEED_EPOCH_BASE: u64 = 2;

fn subseed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Runs training to completion. Deterministic given (dataset, config).
pub fn train_run(
    dataset: &MultimodalDataset,
    config: &TrainConfig,
) -> Result<RunReport, PipelineError> {
    train_run_with_observer(dataset, config, |_| Ok(()))
}

/// As [`train_run`], invoking `observer` after each epoch with that epoch's
/// metrics and snapshots (for streaming artifact writers).
pub fn train_run_with_observer(
    dataset: &MultimodalDataset,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord) -> Result<(), PipelineError>,
) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    dataset.validate()?;
    config.validate()?;
    let m = dataset.n_modalities();
    if config.exclude_self_in_mg && m < 2 {
        return Err(PipelineError::Config(
            "exclude_self_in_mg needs at least 2 modalities".into(),
        ));
    }

    // Deterministic 80/20 split: shuffle once, hold out the tail fifth.
    let n = dataset.n_samples();
    let order = shuffled_indices(n, subseed(config.seed, SEED_SPLIT));
    let n_test = n / 5;
    let train_indices = order[..n - n_test].to_vec();
    let test_indices = order[n - n_test..].to_vec();
    let train = dataset.subset(&train_indices);
    let test = dataset.subset(&test_indices);
    let n_train = train.n_samples();
    if n_train == 0 {
        return Err(PipelineError::Config("training split is empty".into()));
    }
    let train_feats: Vec<Array2<f64>> =
        train.modalities.iter().map(|b| b.features.clone()).collect();
    let label_is_true: Option<Vec<bool>> = train.true_labels.as_ref().map(|t| {
        train.noisy_labels.iter().zip(t).map(|(&ny, &ty)| ny == ty).collect()
    });

    let arch = ArchSpec::new(
        dataset.input_dims(),
        config.hidden_dim,
        config.embed_dim,
        dataset.n_classes,
    );
    let mut params = init_params(&arch, subseed(config.seed, SEED_INIT))?;
    let mut adam = AdamState::new(&params, config.learning_rate);
    let mut state = CorrectionState::new(n_train, dataset.n_classes, config.mu_ema)?;
    let temps = config.temperatures();
    let weights = config.term_weights();

    let mut epochs_out = Vec::with_capacity(config.epochs);
    let mut final_division: Option<Division> = None;

    for epoch in 0..config.epochs {
        if config.lr_decay_epochs.contains(&epoch) {
            adam.learning_rate /= 10.0;
        }

        // Division, correction, and routing — or all-given routing during
        // warm-up and in the ablation.
        let warm =
            config.mode == TrainMode::BaselineNoDivision || epoch < config.warmup_epochs;
        let mut division: Option<Division> = None;
        let mut gmm: Option<GmmModel> = None;
        let mut normalized: Option<Vec<f64>> = None;
        let plan: SupervisionPlan;
        if warm {
            plan = SupervisionPlan::all_warmup(n_train);
        } else {
            let scored = sample_losses_multimodal(&params, &train_feats, &train.noisy_labels)?;
            let l_norm = normalize_losses(&scored.total).map_err(|e| match e {
                DivideError::NonFinite(sample) => PipelineError::NonFiniteLoss { epoch, sample },
                other => other.into(),
            })?;
            let fitted = if config.normalize_losses_for_gmm {
                gmm_fit(&l_norm, config.em_iters)?
            } else {
                gmm_fit(&scored.total, config.em_iters)?
            };
            let cred = if config.normalize_losses_for_gmm {
                credibility(&l_norm, &fitted)
            } else {
                credibility(&scored.total, &fitted)
            };
            let div = divide(&cred, config.alpha)?;
            let mask: Option<Vec<bool>> = config
                .ema_update_noisy_only
                .then(|| div.clean_mask.iter().map(|&c| !c).collect());
            state = correct_labels(&scored.fused_probs, &state, mask.as_deref())?;
            plan = route_supervision(Some(&div), &state, epoch, config.warmup_epochs)?;
            gmm = Some(fitted);
            normalized = Some(l_norm);
            division = Some(div);
        }

        // Routed mini-batch training over a seeded shuffle of the train
        // split; every sample lands in exactly one batch.
        let epoch_order =
            shuffled_indices(n_train, subseed(config.seed, SEED_EPOCH_BASE + epoch as u64));
        let mut sums = [0.0f64; 4];
        for (batch, chunk) in epoch_order.chunks(config.batch_size).enumerate() {
            let feats: Vec<Array2<f64>> = train_feats
                .iter()
                .map(|f| f.select(Axis(0), chunk))
                .collect();
            let mut sem_labels = Vec::with_capacity(chunk.len());
            let mut cls_labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let given = train.noisy_labels[i];
                match plan.routes[i] {
                    Route::WarmupGiven | Route::CleanGiven => {
                        sem_labels.push(Some(given));
                        cls_labels.push(Some(given));
                    }
                    Route::NoisyCorrected => {
                        let hard = state.hard_label(i)?;
                        sem_labels.push(Some(hard));
                        cls_labels.push(match config.cls_on_noisy {
                            ClsOnNoisy::Corrected => Some(hard),
                            ClsOnNoisy::Given => Some(given),
                            ClsOnNoisy::None => None,
                        });
                    }
                    Route::InstanceOnly => {
                        sem_labels.push(None);
                        cls_labels.push(None);
                    }
                }
            }
            let sup = BatchSupervision { sem_labels, cls_labels };
            let (breakdown, grads) =
                backward(&params, &feats, &sup, &temps, &weights, config.exclude_self_in_mg)
                    .map_err(|e| match e {
                        NetError::NonFinite { tensor } => {
                            PipelineError::NonFiniteBatch { epoch, batch, what: tensor }
                        }
                        other => other.into(),
                    })?;
            let (p, a) = adam_step(&params, &grads, &adam);
            params = p;
            adam = a;
            let w = chunk.len() as f64;
            sums[0] += breakdown.sem * w;
            sums[1] += breakdown.inst * w;
            sums[2] += breakdown.cls * w;
            sums[3] += breakdown.total * w;
        }

        // Held-out retrieval evaluation for every ordered modality pair.
        let mut map = BTreeMap::new();
        if test.n_samples() > 0 {
            let eval_labels = test.true_labels.as_ref().unwrap_or(&test.noisy_labels);
            let mut embeds = Vec::with_capacity(m);
            for (j, block) in test.modalities.iter().enumerate() {
                embeds.push(forward_embed(&params, block.features.view(), j)?);
            }
            for (a, block_a) in test.modalities.iter().enumerate() {
                for (b, block_b) in test.modalities.iter().enumerate() {
                    if a == b {
                        continue;
                    }
                    let r = map_retrieval(
                        embeds[a].view(),
                        eval_labels,
                        embeds[b].view(),
                        eval_labels,
                    )?;
                    map.insert(format!("{}->{}", block_a.name, block_b.name), r.map);
                }
            }
        }

        let nf = n_train as f64;
        let metrics = EpochMetrics {
            epoch,
            map,
            division_accuracy: division.as_ref().and_then(|d| {
                division_accuracy(d, &train.noisy_labels, train.true_labels.as_deref())
            }),
            correction_accuracy: division.as_ref().and_then(|d| {
                correction_accuracy(&state, d, train.true_labels.as_deref())
            }),
            loss_sem: sums[0] / nf,
            loss_inst: sums[1] / nf,
            loss_cls: sums[2] / nf,
            loss_total: sums[3] / nf,
            n_clean: division.as_ref().map_or(n_train, Division::n_clean),
            n_noisy: division.as_ref().map_or(0, Division::n_noisy),
            gmm,
        };
        observer(&EpochRecord {
            metrics: &metrics,
            division: division.as_ref().map(|d| DivisionRecord {
                normalized_losses: normalized.as_deref().unwrap(),
                division: d,
                label_is_true: label_is_true.as_deref(),
            }),
            routing: division.as_ref().map(|_| RoutingRecord {
                plan: &plan,
                state: &state,
                true_labels: train.true_labels.as_deref(),
            }),
        })?;
        epochs_out.push(metrics);
        if division.is_some() {
            final_division = division;
        }
    }

    Ok(RunReport {
        config: config.clone(),
        arch,
        epochs: epochs_out,
        wall_time_secs: started.elapsed().as_secs_f64(),
        final_params: params,
        final_division,
        final_correction: state,
        train_indices,
        test_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, inject_noise, NoiseKind, NoiseSpec, SynthConfig};

    fn tiny_dataset(seed: u64) -> MultimodalDataset {
        let mut ds = generate_synthetic(&SynthConfig {
            n_per_class: 10,
            n_classes: 3,
            dims: vec![5, 4],
            prototype_scale: 1.0,
            cluster_std: 0.2,
            modality_corruption: vec![0.0, 0.0],
            seed,
        })
        .unwrap();
        ds.noisy_labels = inject_noise(
            &ds.noisy_labels,
            &NoiseSpec { kind: NoiseKind::Symmetric, rate: 0.3, seed: seed ^ 1 },
            ds.n_classes,
        )
        .unwrap();
        ds
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            warmup_epochs: 1,
            batch_size: 8,
            hidden_dim: 8,
            embed_dim: 4,
            seed: 7,
            ..TrainConfig::new(3)
        }
    }

    #[test]
    fn minimal_json_gets_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 4}"#).unwrap();
        assert_eq!(c.epochs, 4);
        assert_eq!(c.warmup_epochs, 5);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.tau_c, 0.22);
        assert_eq!(c.tau_m, 1.0);
        assert_eq!(c.mu_ema, 0.9);
        assert_eq!(c.em_iters, 10);
        assert!(c.normalize_losses_for_gmm);
        assert_eq!(c.cls_on_noisy, ClsOnNoisy::Corrected);
        assert_eq!(c.mode, TrainMode::Full);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 4, "warmup": 1}"#).is_err());
    }

    #[test]
    fn mode_accepts_the_short_alias_but_emits_the_long_name() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 1, "mode": "dac"}"#).unwrap();
        assert_eq!(c.mode, TrainMode::Full);
        let echoed = serde_json::to_string(&c).unwrap();
        assert!(echoed.contains(r#""mode":"full""#));
        let b: TrainConfig =
            serde_json::from_str(r#"{"epochs": 1, "mode": "baseline_no_division"}"#).unwrap();
        assert_eq!(b.mode, TrainMode::BaselineNoDivision);
    }

    #[test]
    fn validation_rejects_out_of_range_fields() {
        let base = TrainConfig::new(10);
        for broken in [
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { warmup_epochs: 11, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { learning_rate: 0.0, ..base.clone() },
            TrainConfig { alpha: 1.5, ..base.clone() },
            TrainConfig { tau_c: 0.0, ..base.clone() },
            TrainConfig { mu_ema: 1.0, ..base.clone() },
            TrainConfig { lambda1: -0.1, ..base.clone() },
            TrainConfig { em_iters: 0, ..base.clone() },
            TrainConfig { hidden_dim: 0, ..base.clone() },
        ] {
            assert!(matches!(broken.validate(), Err(PipelineError::Config(_))));
        }
        base.validate().unwrap();
    }

    #[test]
    fn smoke_run_produces_one_metrics_entry_per_epoch() {
        let ds = tiny_dataset(3);
        let report = train_run(&ds, &tiny_config()).unwrap();
        assert_eq!(report.epochs.len(), 3);
        let n_train = ds.n_samples() - ds.n_samples() / 5;
        assert_eq!(report.train_indices.len(), n_train);
        assert_eq!(report.test_indices.len(), ds.n_samples() / 5);

        // Warm-up epoch: everything routed clean, no mixture.
        let e0 = &report.epochs[0];
        assert_eq!(e0.n_clean, n_train);
        assert_eq!(e0.n_noisy, 0);
        assert!(e0.gmm.is_none());
        assert!(e0.division_accuracy.is_none());

        // Post-warm-up: division exists and the sizes partition the split.
        let e1 = &report.epochs[1];
        assert!(e1.gmm.is_some());
        assert_eq!(e1.n_clean + e1.n_noisy, n_train);
        assert!(e1.division_accuracy.is_some());
        assert!(report.final_division.is_some());
        assert!(!e1.map.is_empty());
        for (k, v) in &e1.map {
            assert!((0.0..=1.0).contains(v), "{k} out of range: {v}");
        }
        assert_eq!(
            e1.map.keys().cloned().collect::<Vec<_>>(),
            vec!["m0->m1".to_string(), "m1->m0".to_string()]
        );
    }

    #[test]
    fn warmup_only_run_never_touches_correction_state() {
        let ds = tiny_dataset(4);
        let cfg = TrainConfig { warmup_epochs: 3, ..tiny_config() };
        let report = train_run(&ds, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 3);
        assert!(report.epochs.iter().all(|e| e.gmm.is_none()));
        assert!(report.final_division.is_none());
        assert!(report.final_correction.initialized.iter().all(|&i| !i));
    }

    #[test]
    fn baseline_mode_reports_everything_clean() {
        let ds = tiny_dataset(5);
        let cfg = TrainConfig { mode: TrainMode::BaselineNoDivision, ..tiny_config() };
        let report = train_run(&ds, &cfg).unwrap();
        let n_train = ds.n_samples() - ds.n_samples() / 5;
        for e in &report.epochs {
            assert_eq!(e.n_clean, n_train);
            assert_eq!(e.n_noisy, 0);
            assert!(e.gmm.is_none());
        }
    }

    #[test]
    fn repeated_runs_serialize_identically() {
        let ds = tiny_dataset(6);
        let cfg = tiny_config();
        let a = train_run(&ds, &cfg).unwrap();
        let b = train_run(&ds, &cfg).unwrap();
        let lines = |r: &RunReport| {
            r.epochs
                .iter()
                .map(|e| serde_json::to_string(e).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(lines(&a), lines(&b));
    }

    #[test]
    fn observer_sees_snapshots_only_after_warmup() {
        let ds = tiny_dataset(8);
        let cfg = tiny_config();
        let mut saw = Vec::new();
        train_run_with_observer(&ds, &cfg, |rec| {
            saw.push((rec.metrics.epoch, rec.division.is_some(), rec.routing.is_some()));
            if let Some(d) = &rec.division {
                assert_eq!(d.normalized_losses.len(), d.division.clean_mask.len());
                assert!(d.label_is_true.is_some());
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(saw, vec![(0, false, false), (1, true, true), (2, true, true)]);
    }

    #[test]
    fn exclude_self_needs_two_modalities() {
        let mut ds = tiny_dataset(9);
        ds.modalities.truncate(1);
        let cfg = TrainConfig { exclude_self_in_mg: true, ..tiny_config() };
        assert!(matches!(train_run(&ds, &cfg), Err(PipelineError::Config(_))));
    }

    #[test]
    fn divergence_is_reported_with_epoch_and_batch() {
        let ds = tiny_dataset(10);
        let cfg = TrainConfig {
            learning_rate: 1e308,
            warmup_epochs: 3,
            ..tiny_config()
        };
        match train_run(&ds, &cfg) {
            Err(e @ PipelineError::NonFiniteBatch { .. }) => {
                let msg = e.to_string();
                assert!(msg.contains("epoch") && msg.contains("batch"), "{msg}");
            }
            other => panic!("expected a non-finite batch abort, got {other:?}"),
        }
    }
}
