//! Risk models for failed healing after the first non-union revision surgery.
//!
//! The crate covers the whole study protocol: cohort ingestion and synthetic
//! generation ([`cohort`]), encoding/imputation/scaling ([`preprocess`]), three
//! probability classifiers ([`models`]), confusion-matrix metrics centred on the
//! unified performance measure ([`metrics`]), resampled Wilcoxon model
//! comparison ([`compare`]), LOWESS calibration ([`calibration`]) and the
//! end-to-end experiment drivers ([`experiments`]) used by the `nonunion` CLI.

pub mod calibration;
pub mod cli;
pub mod cohort;
pub mod compare;
pub mod error;
pub mod experiments;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod rng;

pub use error::{Error, Result};
