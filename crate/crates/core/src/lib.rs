//! Semi-supervised domain adaptation with predicted-accuracy guided source
//! example weighting.
//!
//! A small feature extractor / classifier pair is trained in three phases:
//!
//! 1. unsupervised adaptation with self-training (pseudo-labels on strongly
//!    augmented unlabeled targets plus minimax entropy),
//! 2. source example weighting driven by class-wise accuracy on augmented
//!    labeled targets and a momentum feature bank of source representations,
//! 3. supervised training on the few labeled targets.
//!
//! The crate also ships a synthetic domain-shift benchmark, the baselines and
//! ablations used to compare weighting strategies, and an experiment harness
//! that writes JSONL metrics and summary reports. See the `examples/`
//! directory for one runnable program per capability.

pub mod augment;
pub mod bank;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
