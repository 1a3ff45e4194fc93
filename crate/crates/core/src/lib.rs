//! Signal pipeline for per-session engagement regression from wrist-worn
//! wearables and classroom environment sensors.
//!
//! The modules follow the data flow: [`ingest`] loads recordings, [`segment`]
//! finds actual class boundaries, [`preprocess`] filters and screens EDA,
//! [`eda`] and [`hrv`] extract physiological descriptors, [`features`] builds
//! per-session rows, [`model`] and [`eval`] fit and score regressors, and
//! [`synth`] produces a cohort with known latent engagement.

// Comparisons are negated on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod eda;
pub mod error;
pub mod eval;
pub mod features;
pub mod hrv;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod resample;
pub mod segment;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
