//! JSON configuration schemas for the subcommands.
//!
//! Configurations are strict: unknown fields are rejected so a typo fails
//! loudly instead of silently falling back to a default. Every command
//! except `simulate` takes its events either from a synthetic scenario
//! (generated in-process, with ground truth kept for the report) or from an
//! events CSV on disk — exactly one of the two.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use emula_core::cohort::TrialProtocol;
use emula_core::dag::DagSpec;
use emula_core::events::EventStore;
use emula_core::features::AggregationSpec;
use emula_core::pipeline::{EstimatorId, NuisanceFamily, PipelineConfig};
use emula_core::synthgen::{self, ScenarioSpec};
use emula_core::{Error, Result};

/// Reads and parses one strict-JSON configuration file.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::BadConfig(format!("cannot read config {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Where the events come from. Exactly one field must be set.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    /// Synthetic scenario generated in-process.
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    /// Path to an events CSV (`patient_id,code,t_h,value`).
    #[serde(default)]
    pub events: Option<PathBuf>,
}

/// The loaded event store plus everything known about its origin.
pub struct ResolvedInput {
    pub store: EventStore,
    /// The scenario actually generated (seed override applied).
    pub scenario: Option<ScenarioSpec>,
    pub events_path: Option<PathBuf>,
}

impl InputSpec {
    /// Generates or loads the events. A `--seed` override replaces the
    /// scenario seed before generation.
    pub fn resolve(&self, seed: Option<u64>) -> Result<ResolvedInput> {
        match (&self.scenario, &self.events) {
            (Some(spec), None) => {
                let mut spec = spec.clone();
                if let Some(s) = seed {
                    spec.seed = s;
                }
                let (store, _truth) = synthgen::generate(&spec)?;
                Ok(ResolvedInput { store, scenario: Some(spec), events_path: None })
            }
            (None, Some(path)) => Ok(ResolvedInput {
                store: EventStore::load_csv(path)?,
                scenario: None,
                events_path: Some(path.clone()),
            }),
            _ => Err(Error::BadConfig(
                "input must name exactly one of `scenario` or `events`".into(),
            )),
        }
    }

    /// The protocol to emulate: the explicit one if given, otherwise the
    /// generated scenario's default. Events-file inputs have no default.
    pub fn resolve_protocol(&self, explicit: &Option<TrialProtocol>) -> Result<TrialProtocol> {
        match (explicit, &self.scenario) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(spec)) => Ok(synthgen::default_protocol(spec.name, spec.d)),
            (None, None) => Err(Error::BadConfig(
                "an events-file input needs an explicit `protocol`".into(),
            )),
        }
    }

    /// The causal graph to screen the adjustment set against: the explicit
    /// one if given, otherwise the generated scenario's true graph. Events
    /// inputs without a declared graph are not screened.
    pub fn resolve_dag(&self, explicit: &Option<DagSpec>) -> Option<DagSpec> {
        explicit.clone().or_else(|| {
            self.scenario.as_ref().map(|s| synthgen::scenario_dag(s.name, s.d))
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: ScenarioSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub protocol: Option<TrialProtocol>,
    pub pipeline: PipelineConfig,
    /// Causal graph for adjustment-set screening; synthetic inputs default
    /// to the scenario's true graph.
    #[serde(default)]
    pub dag: Option<DagSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VibrateConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub protocol: Option<TrialProtocol>,
    /// Base configuration shared by every cell; defaults to AIPW with no
    /// bootstrap.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    /// Aggregation axis; defaults to first, last and first+last.
    #[serde(default)]
    pub aggregations: Option<Vec<AggregationSpec>>,
    /// Estimator axis; defaults to all five.
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorId>>,
    /// Nuisance-family axis; defaults to linear and forest.
    #[serde(default)]
    pub nuisances: Option<Vec<NuisanceFamily>>,
}

pub fn default_vibration_aggregations() -> Vec<AggregationSpec> {
    vec![AggregationSpec::First, AggregationSpec::Last, AggregationSpec::FirstLast]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItbConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub protocol: Option<TrialProtocol>,
    /// Estimation configuration applied at every window; defaults to AIPW
    /// with no bootstrap.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    /// Eligibility windows to sweep, in hours, strictly increasing;
    /// defaults to 24, 48 and 72.
    #[serde(default)]
    pub windows_h: Option<Vec<f64>>,
}

pub const DEFAULT_ITB_WINDOWS_H: [f64; 3] = [24.0, 48.0, 72.0];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HteConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub protocol: Option<TrialProtocol>,
    /// Supplies aggregation, nuisance family, folds, clipping and seed; the
    /// estimator is intrinsically DML.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortcutConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub protocol: Option<TrialProtocol>,
    /// Seed of the train/test split and the two forests.
    #[serde(default)]
    pub seed: u64,
}

/// The pipeline a command runs with: the explicit one, or `fallback` with
/// interval estimation switched off. A `--seed` override wins either way.
pub fn resolve_pipeline(
    explicit: &Option<PipelineConfig>,
    fallback: EstimatorId,
    seed: Option<u64>,
) -> PipelineConfig {
    let mut cfg = explicit.clone().unwrap_or_else(|| {
        let mut c = PipelineConfig::new(fallback);
        c.n_boot = 0;
        c
    });
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}
