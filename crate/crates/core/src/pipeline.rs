//! The end-to-end estimation pipeline: cohort construction, confounder
//! aggregation, nuisance fitting under cross-fitting, causal estimation,
//! and the bootstrap that re-runs all of it per resample.
//!
//! Hyperparameters are resolved once on the full data (searched or fixed)
//! and then held constant across bootstrap replicates; everything that
//! depends on the resampled rows — imputation, standardization, nuisance
//! fits, the estimator itself — is re-run inside each replicate.

use serde::{Deserialize, Serialize};

use crate::cohort::{build_cohort, CohortRow, FlowchartReport, TrialProtocol};
use crate::error::{Error, Result};
use crate::estimators::{
    ate_aipw, ate_dml, ate_gformula, ate_ipw, ate_psm, bootstrap_ci, AnalyticChoices,
    EffectEstimate, EstimandKind,
};
use crate::events::EventStore;
use crate::features::{aggregate_codes, AggregationSpec, DesignMatrix, WindowRule};
use crate::nuisance::{
    cross_fit_predict, cross_fit_t_learner, random_search, CrossFitPlan, ModelFamily, ModelSpec,
};
use crate::util::derive_seed;

/// Caveat attached to every matching row.
pub const PSM_CAVEAT: &str = "1:1 matching without replacement targets the treated \
population (ATT); percentile bootstrap intervals for matching lack theoretical backing";

// Seed streams: one per independent random decision in the pipeline.
const STREAM_SEARCH_PROPENSITY: u64 = 0xE5;
const STREAM_SEARCH_OUTCOME: u64 = 0x0C;
const STREAM_PLAN: u64 = 0xF01D;
const STREAM_BOOT: u64 = 0xB007;
const STREAM_FOREST_PROPENSITY: u64 = 0xFA;
const STREAM_FOREST_OUTCOME: u64 = 0xFB;

/// The five causal estimators of the vibration grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Psm,
    Ipw,
    GFormula,
    Aipw,
    Dml,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 5] = [
        EstimatorId::Psm,
        EstimatorId::Ipw,
        EstimatorId::GFormula,
        EstimatorId::Aipw,
        EstimatorId::Dml,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorId::Psm => "psm",
            EstimatorId::Ipw => "ipw",
            EstimatorId::GFormula => "g_formula",
            EstimatorId::Aipw => "aipw",
            EstimatorId::Dml => "dml",
        }
    }

    pub fn needs_propensity(&self) -> bool {
        !matches!(self, EstimatorId::GFormula)
    }

    pub fn needs_outcome_model(&self) -> bool {
        matches!(self, EstimatorId::GFormula | EstimatorId::Aipw | EstimatorId::Dml)
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which family both nuisance models are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceFamily {
    Linear,
    Forest,
}

impl NuisanceFamily {
    pub const ALL: [NuisanceFamily; 2] = [NuisanceFamily::Linear, NuisanceFamily::Forest];

    pub fn as_str(&self) -> &'static str {
        match self {
            NuisanceFamily::Linear => "linear",
            NuisanceFamily::Forest => "forest",
        }
    }
}

impl std::fmt::Display for NuisanceFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_n_iter() -> usize {
    crate::nuisance::search::DEFAULT_SEARCH_ITERS
}
fn default_n_trees() -> usize {
    100
}
fn default_max_depth() -> usize {
    10
}

/// How nuisance hyperparameters are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperSpec {
    /// Random search with k-fold cross-validation on the full data.
    Search {
        #[serde(default = "default_n_iter")]
        n_iter: usize,
    },
    /// Exact model specs supplied by the caller (must match the configured
    /// nuisance family).
    Fixed { propensity: ModelSpec, outcome: ModelSpec },
    /// Canonical per-family specs without any search: unit-penalty linear
    /// models, forests sized here.
    Default {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default = "default_max_depth")]
        max_depth: usize,
    },
}

impl Default for HyperSpec {
    fn default() -> Self {
        HyperSpec::Search { n_iter: default_n_iter() }
    }
}

fn default_estimand() -> EstimandKind {
    EstimandKind::RiskDifference
}
fn default_aggregation() -> AggregationSpec {
    AggregationSpec::Last
}
fn default_family() -> NuisanceFamily {
    NuisanceFamily::Linear
}
fn default_window_rule() -> WindowRule {
    WindowRule::PreTreatment
}
fn default_k_folds() -> usize {
    5
}
fn default_clip() -> f64 {
    crate::estimators::DEFAULT_CLIP
}
fn default_caliper_sd() -> f64 {
    crate::estimators::DEFAULT_CALIPER_SD
}
fn default_n_boot() -> usize {
    crate::estimators::DEFAULT_N_BOOT
}
fn default_alpha() -> f64 {
    0.05
}

/// Every analytic choice one estimation run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub estimator: EstimatorId,
    #[serde(default = "default_estimand")]
    pub estimand: EstimandKind,
    #[serde(default = "default_aggregation")]
    pub aggregation: AggregationSpec,
    #[serde(default = "default_family")]
    pub nuisance: NuisanceFamily,
    #[serde(default)]
    pub hyper: HyperSpec,
    /// Which events enter confounder aggregation; the pre-treatment rule is
    /// the leakage-safe default.
    #[serde(default = "default_window_rule")]
    pub window_rule: WindowRule,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_caliper_sd")]
    pub caliper_sd: f64,
    /// Bootstrap replicates; 0 skips interval estimation.
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    /// A minimal configuration for `estimator` with every other choice at
    /// its default.
    pub fn new(estimator: EstimatorId) -> Self {
        PipelineConfig {
            estimator,
            estimand: default_estimand(),
            aggregation: default_aggregation(),
            nuisance: default_family(),
            hyper: HyperSpec::default(),
            window_rule: default_window_rule(),
            k_folds: default_k_folds(),
            clip: default_clip(),
            caliper_sd: default_caliper_sd(),
            n_boot: default_n_boot(),
            alpha: default_alpha(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimand == EstimandKind::RiskRatio
            && matches!(self.estimator, EstimatorId::Dml | EstimatorId::Psm)
        {
            return Err(Error::BadConfig(format!(
                "{} is additive by construction and reports risk differences only",
                self.estimator
            )));
        }
        if self.k_folds < 2 {
            return Err(Error::BadConfig("k_folds must be at least 2".into()));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::BadConfig(format!("clip must lie in (0, 0.5), got {}", self.clip)));
        }
        if !(self.caliper_sd > 0.0) {
            return Err(Error::BadConfig("caliper_sd must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::BadConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_boot == 1 {
            return Err(Error::BadConfig(
                "n_boot must be 0 (no interval) or at least 2".into(),
            ));
        }
        match &self.hyper {
            HyperSpec::Search { n_iter } if *n_iter == 0 => {
                Err(Error::BadConfig("hyperparameter search needs n_iter >= 1".into()))
            }
            HyperSpec::Default { n_trees, max_depth } if *n_trees == 0 || *max_depth == 0 => {
                Err(Error::BadConfig("default forests need n_trees, max_depth >= 1".into()))
            }
            HyperSpec::Fixed { propensity, outcome } => {
                propensity.validate()?;
                outcome.validate()?;
                if !propensity.is_classifier() {
                    return Err(Error::BadConfig(
                        "the propensity model must be a classifier".into(),
                    ));
                }
                let want_forest = self.nuisance == NuisanceFamily::Forest;
                if propensity.is_forest() != want_forest || outcome.is_forest() != want_forest {
                    return Err(Error::BadConfig(format!(
                        "fixed nuisance specs must belong to the configured {} family",
                        self.nuisance
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Cohort plus aggregated design matrix: everything estimation needs, with
/// provenance to echo in reports.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub rows: Vec<CohortRow>,
    pub flowchart: FlowchartReport,
    pub dm: DesignMatrix,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

/// Builds the cohort and aggregates the protocol's confounder codes.
pub fn prepare(
    store: &EventStore,
    protocol: &TrialProtocol,
    aggregation: AggregationSpec,
    rule: WindowRule,
) -> Result<PreparedData> {
    let (rows, flowchart) = build_cohort(store, protocol)?;
    let dm = aggregate_codes(
        store,
        &rows,
        protocol,
        &protocol.confounder_codes,
        aggregation,
        rule,
        false,
    )?;
    let a: Vec<f64> = rows.iter().map(|r| r.a as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.y as f64).collect();
    Ok(PreparedData { rows, flowchart, dm, a, y })
}

/// The resolved propensity and outcome model specs for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisancePair {
    pub propensity: ModelSpec,
    pub outcome: ModelSpec,
}

fn family_members(family: NuisanceFamily, classifier: bool) -> ModelFamily {
    match (family, classifier) {
        (NuisanceFamily::Linear, true) => ModelFamily::Logistic,
        (NuisanceFamily::Linear, false) => ModelFamily::Ridge,
        (NuisanceFamily::Forest, true) => ModelFamily::ForestClassifier,
        (NuisanceFamily::Forest, false) => ModelFamily::ForestRegressor,
    }
}

fn default_spec(family: NuisanceFamily, classifier: bool, n_trees: usize, max_depth: usize, seed: u64) -> ModelSpec {
    match family_members(family, classifier) {
        ModelFamily::Logistic => ModelSpec::LogisticL2 { c: 1.0 },
        ModelFamily::Ridge => ModelSpec::RidgeRegression { alpha: 1.0 },
        ModelFamily::ForestClassifier => {
            ModelSpec::ForestClassifier { n_trees, max_depth, min_leaf: 1, seed }
        }
        ModelFamily::ForestRegressor => {
            ModelSpec::ForestRegressor { n_trees, max_depth, min_leaf: 1, seed }
        }
    }
}

/// Chooses the two nuisance model specs on the full data. Models the
/// estimator never uses fall back to family defaults without a search.
pub fn resolve_nuisances(
    dm: &DesignMatrix,
    a: &[f64],
    y: &[f64],
    config: &PipelineConfig,
) -> Result<NuisancePair> {
    let binary_y = y.iter().all(|v| *v == 0.0 || *v == 1.0);
    if let HyperSpec::Fixed { propensity, outcome } = &config.hyper {
        if outcome.is_classifier() != binary_y {
            return Err(Error::BadConfig(
                "fixed outcome model kind does not match the outcome type".into(),
            ));
        }
        return Ok(NuisancePair { propensity: propensity.clone(), outcome: outcome.clone() });
    }
    let (search_trees, search_depth, n_iter) = match &config.hyper {
        HyperSpec::Search { n_iter } => (default_n_trees(), default_max_depth(), Some(*n_iter)),
        HyperSpec::Default { n_trees, max_depth } => (*n_trees, *max_depth, None),
        HyperSpec::Fixed { .. } => unreachable!("handled above"),
    };
    let propensity = if config.estimator.needs_propensity() {
        match n_iter {
            Some(n_iter) => random_search(
                dm,
                a,
                family_members(config.nuisance, true),
                n_iter,
                config.k_folds,
                derive_seed(config.seed, STREAM_SEARCH_PROPENSITY),
            )?,
            None => default_spec(
                config.nuisance,
                true,
                search_trees,
                search_depth,
                derive_seed(config.seed, STREAM_FOREST_PROPENSITY),
            ),
        }
    } else {
        default_spec(config.nuisance, true, search_trees, search_depth, 0)
    };
    let outcome = if config.estimator.needs_outcome_model() {
        match n_iter {
            Some(n_iter) => random_search(
                dm,
                y,
                family_members(config.nuisance, binary_y),
                n_iter,
                config.k_folds,
                derive_seed(config.seed, STREAM_SEARCH_OUTCOME),
            )?,
            None => default_spec(
                config.nuisance,
                binary_y,
                search_trees,
                search_depth,
                derive_seed(config.seed, STREAM_FOREST_OUTCOME),
            ),
        }
    } else {
        default_spec(config.nuisance, binary_y, search_trees, search_depth, 0)
    };
    Ok(NuisancePair { propensity, outcome })
}

/// The point estimate on a row subset (`idx` may repeat rows, as in a
/// bootstrap resample). Re-runs cross-fitting — including per-fold
/// imputation and standardization — on exactly these rows.
pub fn point_for_rows(
    dm: &DesignMatrix,
    a: &[f64],
    y: &[f64],
    pair: &NuisancePair,
    config: &PipelineConfig,
    idx: &[usize],
) -> Result<f64> {
    let sub_dm = dm.select_rows(idx);
    let sub_a: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
    let sub_y: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let plan = CrossFitPlan::new(idx.len(), config.k_folds, derive_seed(config.seed, STREAM_PLAN))?;

    let e_hat = if config.estimator.needs_propensity() {
        Some(cross_fit_predict(&pair.propensity, &sub_dm, &sub_a, &plan)?)
    } else {
        None
    };
    match config.estimator {
        EstimatorId::Psm => {
            let (point, n_matched) =
                ate_psm(e_hat.as_ref().unwrap(), &sub_a, &sub_y, config.caliper_sd)?;
            log::debug!("psm matched {n_matched} pairs out of {} rows", idx.len());
            Ok(point)
        }
        EstimatorId::Ipw => {
            ate_ipw(e_hat.as_ref().unwrap(), &sub_a, &sub_y, config.clip, config.estimand)
                .map(|(_, p)| p)
        }
        EstimatorId::GFormula => {
            let (mu1, mu0) = cross_fit_t_learner(&pair.outcome, &sub_dm, &sub_y, &sub_a, &plan)?;
            ate_gformula(&mu1, &mu0, config.estimand).map(|(_, p)| p)
        }
        EstimatorId::Aipw => {
            let (mu1, mu0) = cross_fit_t_learner(&pair.outcome, &sub_dm, &sub_y, &sub_a, &plan)?;
            ate_aipw(
                &mu1,
                &mu0,
                e_hat.as_ref().unwrap(),
                &sub_a,
                &sub_y,
                config.clip,
                config.estimand,
            )
            .map(|(_, p)| p)
        }
        EstimatorId::Dml => {
            let m_hat = cross_fit_predict(&pair.outcome, &sub_dm, &sub_y, &plan)?;
            ate_dml(&m_hat, e_hat.as_ref().unwrap(), &sub_a, &sub_y, config.clip)
        }
    }
}

/// Runs the configured estimator on prepared data: full-data point estimate
/// plus (when `n_boot ≥ 2`) a percentile bootstrap interval that re-runs the
/// whole pipeline per resample with the hyperparameters held fixed.
pub fn estimate_effect_prepared(
    prep: &PreparedData,
    protocol: &TrialProtocol,
    config: &PipelineConfig,
) -> Result<EffectEstimate> {
    config.validate()?;
    let pair = resolve_nuisances(&prep.dm, &prep.a, &prep.y, config)?;
    let n = prep.rows.len();
    let identity: Vec<usize> = (0..n).collect();
    let point = point_for_rows(&prep.dm, &prep.a, &prep.y, &pair, config, &identity)?;

    let (ci_low, ci_high, n_boot) = if config.n_boot >= 2 {
        let f = |idx: &[usize]| point_for_rows(&prep.dm, &prep.a, &prep.y, &pair, config, idx);
        let (lo, hi) = bootstrap_ci(
            &f,
            n,
            config.n_boot,
            config.alpha,
            derive_seed(config.seed, STREAM_BOOT),
        )?;
        (Some(lo), Some(hi), config.n_boot)
    } else {
        (None, None, 0)
    };

    Ok(EffectEstimate {
        estimator_id: config.estimator.as_str().to_string(),
        estimand: config.estimand,
        point,
        ci_low,
        ci_high,
        n_boot,
        choices: AnalyticChoices {
            aggregation: config.aggregation.as_str().to_string(),
            nuisance: config.nuisance.as_str().to_string(),
            window_h: protocol.eligibility_window_h,
            seed: config.seed,
        },
        caveat: (config.estimator == EstimatorId::Psm).then(|| PSM_CAVEAT.to_string()),
    })
}

/// The cross-fitted propensity scores the configured estimator would use on
/// the full prepared data: same resolved model, same fold plan. Lets overlap
/// and balance diagnostics describe the estimator's actual weights instead
/// of a refit's.
pub fn cross_fitted_propensity(
    prep: &PreparedData,
    config: &PipelineConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let pair = resolve_nuisances(&prep.dm, &prep.a, &prep.y, config)?;
    let plan = CrossFitPlan::new(
        prep.rows.len(),
        config.k_folds,
        derive_seed(config.seed, STREAM_PLAN),
    )?;
    cross_fit_predict(&pair.propensity, &prep.dm, &prep.a, &plan)
}

/// [`estimate_effect_prepared`] starting from the raw event store.
pub fn estimate_effect(
    store: &EventStore,
    protocol: &TrialProtocol,
    config: &PipelineConfig,
) -> Result<EffectEstimate> {
    config.validate()?;
    protocol.validate()?;
    let prep = prepare(store, protocol, config.aggregation, config.window_rule)?;
    estimate_effect_prepared(&prep, protocol, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{self, ScenarioKind, ScenarioSpec, TauSpec};

    fn small_store(n: usize, seed: u64) -> (EventStore, TrialProtocol) {
        let mut spec =
            ScenarioSpec::new(ScenarioKind::LinearConfounding, n, 2, seed, TauSpec::Scalar(0.5));
        spec.binary_outcome = true;
        let (store, _) = synthgen::generate(&spec).unwrap();
        let protocol = synthgen::default_protocol(ScenarioKind::LinearConfounding, 2);
        (store, protocol)
    }

    fn fast_config(estimator: EstimatorId) -> PipelineConfig {
        let mut c = PipelineConfig::new(estimator);
        c.hyper = HyperSpec::Default { n_trees: 10, max_depth: 4 };
        c.n_boot = 0;
        c
    }

    #[test]
    fn config_defaults_fill_in_and_unknown_keys_are_rejected() {
        let c: PipelineConfig = serde_json::from_str(r#"{"estimator":"aipw"}"#).unwrap();
        assert_eq!(c.estimator, EstimatorId::Aipw);
        assert_eq!(c.estimand, EstimandKind::RiskDifference);
        assert_eq!(c.aggregation, AggregationSpec::Last);
        assert_eq!(c.nuisance, NuisanceFamily::Linear);
        assert_eq!(c.hyper, HyperSpec::Search { n_iter: 10 });
        assert_eq!(c.k_folds, 5);
        assert_eq!(c.n_boot, 50);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"estimator":"aipw","junk":1}"#)
            .is_err());
        let back: PipelineConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn validation_rejects_incoherent_configs() {
        let mut c = PipelineConfig::new(EstimatorId::Dml);
        c.estimand = EstimandKind::RiskRatio;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::new(EstimatorId::Psm);
        c.estimand = EstimandKind::RiskRatio;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::new(EstimatorId::Ipw);
        c.k_folds = 1;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::new(EstimatorId::Ipw);
        c.clip = 0.5;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::new(EstimatorId::Ipw);
        c.n_boot = 1;
        assert!(c.validate().is_err());
        // Fixed specs must match the declared family.
        let mut c = PipelineConfig::new(EstimatorId::Aipw);
        c.nuisance = NuisanceFamily::Forest;
        c.hyper = HyperSpec::Fixed {
            propensity: ModelSpec::LogisticL2 { c: 1.0 },
            outcome: ModelSpec::LogisticL2 { c: 1.0 },
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_estimator_runs_end_to_end() {
        let (store, protocol) = small_store(250, 5);
        for estimator in EstimatorId::ALL {
            let config = fast_config(estimator);
            let est = estimate_effect(&store, &protocol, &config).unwrap();
            assert!(est.point.is_finite(), "{estimator} produced a non-finite point");
            assert_eq!(est.estimator_id, estimator.as_str());
            assert_eq!(est.n_boot, 0);
            assert_eq!(est.choices.window_h, 24.0);
            assert_eq!(est.caveat.is_some(), estimator == EstimatorId::Psm);
        }
    }

    #[test]
    fn forest_family_runs_end_to_end() {
        let (store, protocol) = small_store(150, 6);
        let mut config = fast_config(EstimatorId::Dml);
        config.nuisance = NuisanceFamily::Forest;
        let est = estimate_effect(&store, &protocol, &config).unwrap();
        assert!(est.point.is_finite());
        assert_eq!(est.choices.nuisance, "forest");
    }

    #[test]
    fn estimates_are_deterministic_and_seed_sensitive() {
        let (store, protocol) = small_store(200, 8);
        let mut config = fast_config(EstimatorId::Aipw);
        config.n_boot = 10;
        let a = estimate_effect(&store, &protocol, &config).unwrap();
        let b = estimate_effect(&store, &protocol, &config).unwrap();
        assert_eq!(a, b);
        config.seed = 1;
        let c = estimate_effect(&store, &protocol, &config).unwrap();
        assert_ne!((a.ci_low, a.ci_high), (c.ci_low, c.ci_high));
    }

    #[test]
    fn risk_ratio_estimand_flows_through() {
        let (store, protocol) = small_store(250, 9);
        let mut config = fast_config(EstimatorId::Ipw);
        config.estimand = EstimandKind::RiskRatio;
        let est = estimate_effect(&store, &protocol, &config).unwrap();
        assert_eq!(est.estimand, EstimandKind::RiskRatio);
        assert!(est.point > 0.0);
    }

    #[test]
    fn searched_pipeline_runs() {
        let (store, protocol) = small_store(120, 11);
        let mut config = fast_config(EstimatorId::Ipw);
        config.hyper = HyperSpec::Search { n_iter: 2 };
        config.k_folds = 3;
        let est = estimate_effect(&store, &protocol, &config).unwrap();
        assert!(est.point.is_finite());
    }
}
