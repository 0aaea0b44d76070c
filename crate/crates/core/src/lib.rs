//! Trial emulation and causal effect estimation on longitudinal patient event streams.
//!
//! The crate follows a five-step analytic path: cohort design with explicit
//! time-zero alignment ([`cohort`]), identification via causal-graph variable
//! roles ([`dag`]), estimation with nuisance models and a family of causal
//! estimators ([`features`], [`nuisance`], [`estimators`]), robustness
//! diagnostics — overlap, vibration analysis, immortal-time sweeps, shortcut
//! demonstrations ([`diagnostics`]) — and treatment-effect heterogeneity
//! ([`hte`]). Synthetic generators with counterfactual ground truth
//! ([`synthgen`]) act as the oracle against which every estimator and bias
//! mechanism is validated.

pub mod cohort;
pub mod dag;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod events;
pub mod features;
pub mod hte;
pub mod matrix;
pub mod nuisance;
pub mod pipeline;
pub mod svg;
pub mod synthgen;
pub mod util;

pub use error::{Error, Result};
