//! Semi-supervised survival analysis with Cox partial likelihood and a
//! mean-teacher consistency scheme.
//!
//! The crate is organised around six areas:
//!
//! * [`autodiff`]: a small reverse-mode tape (f64 everywhere) with the ops
//!   needed for Cox losses and attention, plus SGD/Adam.
//! * [`data`]: expression-matrix ingestion and preprocessing, clinical label
//!   joins, synthetic cohort generation and stratified fold plans.
//! * [`model`]: student/teacher MLP pairs with EMA teacher updates, and a
//!   two-modality mutual-attention fusion head.
//! * [`loss`]: risk sets, the negative Cox partial likelihood and the
//!   student/teacher consistency penalty.
//! * [`metrics`]: concordance, Breslow baseline hazard, Kaplan-Meier,
//!   Brier/IBS, log-rank and Wilcoxon rank-sum.
//! * [`experiment`]: training loops, repeated cross-validation protocol,
//!   ablations and unlabeled-scaling studies.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod seeds;

pub use error::{Error, Result};
