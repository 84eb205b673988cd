//! Noise-robust training for cross-modal retrieval on feature vectors.
//!
//! The pipeline trains small per-modality embedding networks against labels
//! that are partially wrong. Each epoch it:
//!
//! 1. scores every training sample with a multimodal classification loss,
//! 2. fits a two-component Gaussian mixture to the (normalized) loss
//!    distribution and splits the set into clean and noisy samples
//!    ([`divide`]),
//! 3. replaces the labels of noisy samples with self-corrected ones tracked
//!    by an exponential moving average of model predictions ([`correct`]),
//! 4. trains with a combination of class-center contrastive alignment,
//!    instance-level cross-modal alignment, and classification losses
//!    ([`losses`], [`net`]),
//! 5. reports retrieval mAP and division/correction quality ([`eval`]).
//!
//! [`pipeline::train_run`] wires the stages together; the individual modules
//! are usable on their own and are deterministic given a seed.

pub mod correct;
pub mod data;
pub mod divide;
pub mod eval;
pub mod losses;
pub mod net;
pub mod pipeline;
