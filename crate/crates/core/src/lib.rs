//! Evaluate word-vector tables against word-level cognitive signals.
//!
//! The pipeline fits small feed-forward regression networks that predict
//! cognitive features (eye-tracking measures, EEG electrode vectors, fMRI
//! voxel vectors) from word vectors, compares the per-word errors of each
//! embedding against dimension-matched random baselines with Wilcoxon
//! signed-rank tests under a Bonferroni correction, and aggregates
//! everything into machine-readable reports.
//!
//! Modules:
//!
//! * [`embedding`]: word-vector tables, the text vector-file format, and
//!   seeded random baseline generation.
//! * [`cognitive`]: cognitive datasets, subject averaging, min-max
//!   scaling, voxel sampling, and supervision-pair assembly.
//! * [`regression`]: the k-n-m ReLU network, Adam training, k-fold cross
//!   validation, and hidden-size grid search.
//! * [`significance`]: Wilcoxon signed-rank tests and the Bonferroni
//!   correction over hypothesis groups.
//! * [`report`]: MSE aggregation, Pearson/Spearman correlations,
//!   output-dimension rankings, and report serialization.
//! * [`manifest`] / [`pipeline`]: declarative experiment manifests and
//!   the resumable job runner behind the command-line interface.

pub mod cognitive;
pub mod embedding;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod significance;
pub mod util;

pub use error::{Error, Result};
