//! Robustness diagnostics around the estimation pipeline: propensity overlap
//! (NTV and per-arm histograms), covariate balance (standardized mean
//! differences), the shortcut-failure demonstration, the vibration-analysis
//! grid, and the immortal-time eligibility sweep.
//!
//! Grid cells and sweep windows run as independent parallel tasks and are
//! reduced in a fixed order, so outputs are byte-identical across runs and
//! thread counts. Failures inside a grid or sweep are first-class data: the
//! failing cell keeps its analytic coordinates and carries an error tag
//! instead of an estimate, and is never silently dropped.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::cohort::{build_cohort, mean_treatment_gap, TrialProtocol};
use crate::error::{Error, Result};
use crate::estimators::{EffectEstimate, EstimandKind};
use crate::events::EventStore;
use crate::features::{
    aggregate_codes, apply_imputer, fit_imputer, AggregationSpec, DesignMatrix, Imputer,
    WindowRule,
};
use crate::nuisance::{FittedNuisance, ModelSpec};
use crate::pipeline::{
    estimate_effect_prepared, prepare, EstimatorId, NuisanceFamily, PipelineConfig, PreparedData,
};
use crate::util::{derive_seed, mean, population_variance};

/// Number of equal-width propensity histogram bins on `[0, 1]`.
pub const OVERLAP_BINS: usize = 20;

// Seed streams of the shortcut demonstration, all derived from the caller's
// seed so the two models and the split stay independent but reproducible.
const STREAM_SPLIT: u64 = 0x5117;
const STREAM_FOREST_ALL_STAY: u64 = 0xA115;
const STREAM_FOREST_PRETREAT: u64 = 0x93E5;

/// Forest size used by both shortcut-demo classifiers. Moderate on purpose:
/// the demonstration contrasts feature availability, not model capacity.
const SHORTCUT_TREES: usize = 60;
const SHORTCUT_DEPTH: usize = 8;
const TRAIN_FRACTION: f64 = 0.8;

// ---------------------------------------------------------------------------
// Scalar diagnostics
// ---------------------------------------------------------------------------

fn check_arms(a: &[f64]) -> Result<(f64, f64)> {
    if a.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::BadSpec("treatment vector must be 0/1".into()));
    }
    let n1 = a.iter().filter(|&&v| v == 1.0).count();
    if n1 == 0 || n1 == a.len() {
        return Err(Error::SingleArm);
    }
    Ok((n1 as f64, (a.len() - n1) as f64))
}

/// Normalized total variation between the treated and control covariate
/// distributions, expressed through the propensity score: with
/// `p̂ = mean(a)`,
///
/// ```text
/// NTV = (1/2n) Σᵢ |êᵢ/p̂ − (1−êᵢ)/(1−p̂)|
/// ```
///
/// clamped into `[0, 1]`. This is the plug-in total-variation distance
/// between `P(X | A=1)` and `P(X | A=0)` obtained from Bayes' rule, so `0`
/// means perfect overlap (`ê` constant at `p̂`) and values near `1` mean the
/// arms are separable from covariates alone.
pub fn ntv(e_hat: &[f64], a: &[f64]) -> Result<f64> {
    if e_hat.len() != a.len() {
        return Err(Error::DimensionMismatch { expected: e_hat.len(), found: a.len() });
    }
    if e_hat.is_empty() {
        return Err(Error::BadSpec("ntv needs at least one row".into()));
    }
    check_arms(a)?;
    if e_hat.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::BadSpec("propensities must lie strictly inside (0, 1)".into()));
    }
    let p = mean(a);
    let total: f64 =
        e_hat.iter().map(|&e| (e / p - (1.0 - e) / (1.0 - p)).abs()).sum();
    Ok((total / (2.0 * e_hat.len() as f64)).clamp(0.0, 1.0))
}

/// Standardized mean difference of one covariate between arms:
/// `(mean_treated − mean_control) / pooled SD`, where the arm means are
/// weighted when `weights` is given but the denominator is always the
/// unweighted population SD of the whole column, so weighted and unweighted
/// SMDs stay comparable. A column with zero pooled SD returns 0.
pub fn smd(x_col: &[f64], a: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if x_col.len() != a.len() {
        return Err(Error::DimensionMismatch { expected: x_col.len(), found: a.len() });
    }
    if x_col.is_empty() {
        return Err(Error::BadSpec("smd needs at least one row".into()));
    }
    check_arms(a)?;
    if let Some(w) = weights {
        if w.len() != a.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), found: w.len() });
        }
        if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::BadSpec("weights must be finite and non-negative".into()));
        }
    }
    let mut sums = [0.0f64; 2];
    let mut wsums = [0.0f64; 2];
    for i in 0..x_col.len() {
        let arm = a[i] as usize;
        let w = weights.map_or(1.0, |w| w[i]);
        sums[arm] += w * x_col[i];
        wsums[arm] += w;
    }
    if wsums[0] == 0.0 || wsums[1] == 0.0 {
        return Err(Error::BadSpec("weights sum to zero in one arm".into()));
    }
    let sd = population_variance(x_col).sqrt();
    if sd == 0.0 {
        return Ok(0.0);
    }
    Ok((sums[1] / wsums[1] - sums[0] / wsums[0]) / sd)
}

/// Area under the ROC curve in the Mann–Whitney formulation: the fraction of
/// (positive, negative) pairs ranked correctly, with ties counting 1/2.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), found: labels.len() });
    }
    if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::BadSpec("labels must be 0/1".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::BadSpec("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&v| v == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Walk tie groups in score order; every positive beats the negatives
    // strictly below it and half-beats the negatives tied with it.
    let mut u = 0.0;
    let mut neg_below = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        let (mut pos_tied, mut neg_tied) = (0.0, 0.0);
        while j < idx.len() && scores[idx[j]] == scores[idx[k]] {
            if labels[idx[j]] == 1.0 {
                pos_tied += 1.0;
            } else {
                neg_tied += 1.0;
            }
            j += 1;
        }
        u += pos_tied * (neg_below + 0.5 * neg_tied);
        neg_below += neg_tied;
        k = j;
    }
    Ok(u / (n_pos as f64 * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Overlap and balance reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapBin {
    pub lo: f64,
    pub hi: f64,
    pub treated: usize,
    pub control: usize,
}

/// Overlap diagnostic: the NTV summary plus per-arm histograms of `ê` over
/// [`OVERLAP_BINS`] equal bins on `[0, 1]`. Bin counts sum to the arm sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub ntv: f64,
    pub treated_fraction: f64,
    pub bins: Vec<OverlapBin>,
}

pub const OVERLAP_CSV_HEADER: &str = "bin_lo,bin_hi,treated,control";

pub fn overlap_report(e_hat: &[f64], a: &[f64]) -> Result<OverlapReport> {
    let ntv = ntv(e_hat, a)?; // also validates inputs
    let mut bins: Vec<OverlapBin> = (0..OVERLAP_BINS)
        .map(|i| OverlapBin {
            lo: i as f64 / OVERLAP_BINS as f64,
            hi: (i + 1) as f64 / OVERLAP_BINS as f64,
            treated: 0,
            control: 0,
        })
        .collect();
    for (&e, &ai) in e_hat.iter().zip(a) {
        let b = ((e * OVERLAP_BINS as f64) as usize).min(OVERLAP_BINS - 1);
        if ai == 1.0 {
            bins[b].treated += 1;
        } else {
            bins[b].control += 1;
        }
    }
    Ok(OverlapReport { ntv, treated_fraction: mean(a), bins })
}

impl OverlapReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(OVERLAP_CSV_HEADER.split(','))?;
        for b in &self.bins {
            w.write_record([
                b.lo.to_string(),
                b.hi.to_string(),
                b.treated.to_string(),
                b.control.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::BadSpec(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path.as_ref(), self.to_csv()?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub column: String,
    pub smd_unweighted: f64,
    pub smd_weighted: f64,
}

/// Per-covariate balance before and after inverse-propensity weighting.
/// Both columns use the same pooled-SD denominator, so improvement is read
/// directly as shrinkage toward zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
}

pub const BALANCE_CSV_HEADER: &str = "column,smd_unweighted,smd_weighted";

/// Computes SMDs for every design-matrix column, unweighted and under the
/// ATE inverse-propensity weights `a/ê + (1−a)/(1−ê)`. Missing cells are
/// filled with whole-sample medians first so weights and values stay
/// aligned.
pub fn balance_report(dm: &DesignMatrix, a: &[f64], e_hat: &[f64]) -> Result<BalanceReport> {
    if dm.rows() != a.len() {
        return Err(Error::DimensionMismatch { expected: dm.rows(), found: a.len() });
    }
    if e_hat.len() != a.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: e_hat.len() });
    }
    check_arms(a)?;
    if e_hat.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::BadSpec("propensities must lie strictly inside (0, 1)".into()));
    }
    let weights: Vec<f64> = a
        .iter()
        .zip(e_hat)
        .map(|(&ai, &e)| if ai == 1.0 { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect();
    let all: Vec<usize> = (0..dm.rows()).collect();
    let imp = fit_imputer(dm, &all)?;
    let filled = crate::features::apply_imputer_plain(&imp, dm, &all)?;
    let mut rows = Vec::with_capacity(filled.cols());
    for (c, name) in filled.column_names.iter().enumerate() {
        let col: Vec<f64> = (0..filled.rows()).map(|r| filled.values.get(r, c)).collect();
        rows.push(BalanceRow {
            column: name.clone(),
            smd_unweighted: smd(&col, a, None)?,
            smd_weighted: smd(&col, a, Some(&weights))?,
        });
    }
    Ok(BalanceReport { rows })
}

impl BalanceReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(BALANCE_CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.column.as_str(),
                &r.smd_unweighted.to_string(),
                &r.smd_weighted.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::BadSpec(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path.as_ref(), self.to_csv()?)?)
    }
}

// ---------------------------------------------------------------------------
// Shortcut demonstration
// ---------------------------------------------------------------------------

/// Outcome-prediction AUCs contrasting what a model can use during training
/// with what exists at decision time.
///
/// "All stay" features aggregate over the whole eligibility window;
/// "pre-treatment" features are the same matrix with every column that
/// contains post-treatment information masked to missing for all rows —
/// matching deployment, where a measurement taken after the treatment
/// decision exists for nobody at prediction time. Columns are detected
/// structurally, by comparing full-window against pre-treatment-window
/// aggregation, not by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReport {
    /// Model trained and evaluated with all-stay features.
    pub auc_trained_all_stay_eval_all_stay: f64,
    /// The same model at decision time, with post-treatment columns masked.
    pub auc_trained_all_stay_eval_pretreatment: f64,
    /// Control model trained on pre-treatment features only.
    pub auc_trained_pretreatment_eval_pretreatment: f64,
    /// The control model with all-stay features offered at evaluation. A
    /// model trained without the post-treatment columns never splits on
    /// them, so this equals the previous entry; reported so the robustness
    /// of the control model is an observed number rather than an assumption.
    pub auc_trained_pretreatment_eval_all_stay: f64,
    /// Names of the columns detected as post-treatment-contaminated.
    pub masked_columns: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Column indices whose values or missingness differ anywhere between two
/// same-shaped matrices.
fn differing_columns(a: &DesignMatrix, b: &DesignMatrix) -> Vec<usize> {
    (0..a.cols())
        .filter(|&c| {
            (0..a.rows()).any(|r| {
                a.is_missing(r, c) != b.is_missing(r, c)
                    || (!a.is_missing(r, c) && a.values.get(r, c) != b.values.get(r, c))
            })
        })
        .collect()
}

/// Splits rows into train/test, preserving the label mix: each class is
/// shuffled and split `train_fraction` / remainder separately. Both sides
/// keep at least one member of each class. Also used by the heterogeneity
/// module to stratify on treatment.
pub(crate) fn stratified_split(
    y: &[f64],
    train_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0.0, 1.0] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::SingleClass);
        }
        members.shuffle(rng);
        let n_test = ((members.len() as f64 * (1.0 - train_fraction)).round() as usize)
            .clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn fit_outcome_forest(
    dm: &DesignMatrix,
    y: &[f64],
    train: &[usize],
    seed: u64,
) -> Result<(Imputer, FittedNuisance)> {
    let imp = fit_imputer(dm, train)?;
    let xtr = apply_imputer(&imp, dm, train)?;
    let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let spec = ModelSpec::ForestClassifier {
        n_trees: SHORTCUT_TREES,
        max_depth: SHORTCUT_DEPTH,
        min_leaf: 1,
        seed,
    };
    let fit = spec.fit(&xtr.values, &ytr, Some(&xtr.column_names))?;
    Ok((imp, fit))
}

fn eval_auc(
    imp: &Imputer,
    model: &FittedNuisance,
    dm: &DesignMatrix,
    y: &[f64],
    test: &[usize],
) -> Result<f64> {
    let xte = apply_imputer(imp, dm, test)?;
    let scores = model.predict(&xte.values)?;
    let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    roc_auc(&scores, &yte)
}

/// Demonstrates the shortcut failure mode: a mortality classifier trained
/// with whole-stay features looks strong, then collapses once evaluation is
/// restricted to the features that exist before the treatment decision,
/// while a control model trained on pre-treatment features alone is immune
/// to the restriction.
///
/// Protocol confounder codes are aggregated with the `Last` statistic; an
/// 80/20 train/test split stratified on the outcome feeds two forest
/// classifiers sharing every choice except the feature window.
pub fn shortcut_demo(
    store: &EventStore,
    protocol: &TrialProtocol,
    seed: u64,
) -> Result<ShortcutReport> {
    let (rows, _flow) = build_cohort(store, protocol)?;
    let agg = AggregationSpec::Last;
    let full = aggregate_codes(
        store,
        &rows,
        protocol,
        &protocol.confounder_codes,
        agg,
        WindowRule::FullEligibility,
        false,
    )?;
    let pre = aggregate_codes(
        store,
        &rows,
        protocol,
        &protocol.confounder_codes,
        agg,
        WindowRule::PreTreatment,
        false,
    )?;
    let masked_idx = differing_columns(&full, &pre);
    let masked_columns: Vec<String> =
        masked_idx.iter().map(|&c| full.column_names[c].clone()).collect();
    let mut deploy = full.clone();
    for &c in &masked_idx {
        deploy.set_column_missing(c);
    }

    let y: Vec<f64> = rows.iter().map(|r| r.y as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT));
    let (train, test) = stratified_split(&y, TRAIN_FRACTION, &mut rng)?;

    let (imp_all, model_all) =
        fit_outcome_forest(&full, &y, &train, derive_seed(seed, STREAM_FOREST_ALL_STAY))?;
    let (imp_pre, model_pre) =
        fit_outcome_forest(&deploy, &y, &train, derive_seed(seed, STREAM_FOREST_PRETREAT))?;

    Ok(ShortcutReport {
        auc_trained_all_stay_eval_all_stay: eval_auc(&imp_all, &model_all, &full, &y, &test)?,
        auc_trained_all_stay_eval_pretreatment: eval_auc(&imp_all, &model_all, &deploy, &y, &test)?,
        auc_trained_pretreatment_eval_pretreatment:
            eval_auc(&imp_pre, &model_pre, &deploy, &y, &test)?,
        auc_trained_pretreatment_eval_all_stay: eval_auc(&imp_pre, &model_pre, &full, &y, &test)?,
        masked_columns,
        n_train: train.len(),
        n_test: test.len(),
    })
}

// ---------------------------------------------------------------------------
// Vibration analysis
// ---------------------------------------------------------------------------

/// One cell of the vibration grid: its analytic coordinates plus either the
/// estimate or the error that prevented it. Exactly one of `estimate` and
/// `error` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VibrationCell {
    pub aggregation: AggregationSpec,
    pub estimator: EstimatorId,
    pub nuisance: NuisanceFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EffectEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The full cartesian product of analytic choices, one [`VibrationCell`]
/// per combination in aggregation-major, estimator-middle, nuisance-minor
/// order. The shared estimand, eligibility window and seed are recorded so
/// failed cells keep complete provenance in the CSV table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VibrationGrid {
    pub estimand: EstimandKind,
    pub window_h: f64,
    pub seed: u64,
    pub cells: Vec<VibrationCell>,
}

pub const VIBRATION_CSV_HEADER: &str =
    "estimator_id,estimand,point,ci_low,ci_high,n_boot,aggregation,nuisance,window_h,seed,error";

impl VibrationGrid {
    pub fn ok_cells(&self) -> impl Iterator<Item = (&VibrationCell, &EffectEstimate)> {
        self.cells.iter().filter_map(|c| c.estimate.as_ref().map(|e| (c, e)))
    }

    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Forest-plot table: the [`EffectEstimate`] CSV schema plus an `error`
    /// column, one row per cell. Failed cells carry their coordinates and
    /// the error message, with the numeric columns empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(VIBRATION_CSV_HEADER.split(','))?;
        for cell in &self.cells {
            match &cell.estimate {
                Some(est) => {
                    let mut rec = est.csv_record();
                    rec.push(String::new());
                    w.write_record(rec)?;
                }
                None => {
                    w.write_record([
                        cell.estimator.as_str(),
                        self.estimand.as_str(),
                        "",
                        "",
                        "",
                        "",
                        cell.aggregation.as_str(),
                        cell.nuisance.as_str(),
                        &self.window_h.to_string(),
                        &self.seed.to_string(),
                        cell.error.as_deref().unwrap_or(""),
                    ])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::BadSpec(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path.as_ref(), self.to_csv()?)?)
    }
}

/// Re-estimates the effect across every combination of aggregation, causal
/// estimator and nuisance family, holding everything else — protocol,
/// estimand, window rule, bootstrap plan, seed — fixed at `base`, so the
/// spread of the grid isolates the analytic choices themselves.
///
/// Each aggregation's cohort and design matrix are built once and shared by
/// its cells. Cells run in parallel and are collected in grid order; a
/// failing cell (including a failing cohort build) becomes an error-tagged
/// cell rather than aborting the grid.
pub fn run_vibration(
    store: &EventStore,
    protocol: &TrialProtocol,
    base: &PipelineConfig,
    aggregations: &[AggregationSpec],
    estimators: &[EstimatorId],
    nuisances: &[NuisanceFamily],
) -> Result<VibrationGrid> {
    if aggregations.is_empty() || estimators.is_empty() || nuisances.is_empty() {
        return Err(Error::BadConfig("vibration grid needs at least one choice per axis".into()));
    }
    protocol.validate()?;
    let prepared: Vec<std::result::Result<PreparedData, String>> = aggregations
        .iter()
        .map(|&agg| {
            prepare(store, protocol, agg, base.window_rule).map_err(|e| e.to_string())
        })
        .collect();

    let mut coords = Vec::with_capacity(aggregations.len() * estimators.len() * nuisances.len());
    for (ai, &agg) in aggregations.iter().enumerate() {
        for &est in estimators {
            for &fam in nuisances {
                coords.push((ai, agg, est, fam));
            }
        }
    }
    let cells: Vec<VibrationCell> = coords
        .par_iter()
        .map(|&(ai, agg, est, fam)| {
            let outcome = match &prepared[ai] {
                Err(e) => Err(e.clone()),
                Ok(prep) => {
                    let mut config = base.clone();
                    config.aggregation = agg;
                    config.estimator = est;
                    config.nuisance = fam;
                    estimate_effect_prepared(prep, protocol, &config).map_err(|e| e.to_string())
                }
            };
            match outcome {
                Ok(estimate) => VibrationCell {
                    aggregation: agg,
                    estimator: est,
                    nuisance: fam,
                    estimate: Some(estimate),
                    error: None,
                },
                Err(error) => VibrationCell {
                    aggregation: agg,
                    estimator: est,
                    nuisance: fam,
                    estimate: None,
                    error: Some(error),
                },
            }
        })
        .collect();
    Ok(VibrationGrid {
        estimand: base.estimand,
        window_h: protocol.eligibility_window_h,
        seed: base.seed,
        cells,
    })
}

// ---------------------------------------------------------------------------
// Immortal-time eligibility sweep
// ---------------------------------------------------------------------------

/// One eligibility window of the sweep: cohort shape, the mean delay from
/// inclusion to treatment among the treated, and the estimate (or the error
/// that prevented it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItbWindow {
    pub window_h: f64,
    /// Mean inclusion-to-treatment gap in hours; `None` when nobody is
    /// treated (or the cohort build failed).
    pub mean_gap_h: Option<f64>,
    pub n_rows: usize,
    pub n_treated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EffectEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItbSweepReport {
    pub windows: Vec<ItbWindow>,
}

pub const ITB_CSV_HEADER: &str = "estimator_id,estimand,point,ci_low,ci_high,n_boot,\
aggregation,nuisance,window_h,seed,mean_gap_h,n_rows,n_treated,error";

impl ItbSweepReport {
    pub fn to_csv(&self, config: &PipelineConfig) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(ITB_CSV_HEADER.split(','))?;
        for win in &self.windows {
            let mut rec = match &win.estimate {
                Some(est) => est.csv_record(),
                None => vec![
                    config.estimator.as_str().to_string(),
                    config.estimand.as_str().to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    config.aggregation.as_str().to_string(),
                    config.nuisance.as_str().to_string(),
                    win.window_h.to_string(),
                    config.seed.to_string(),
                ],
            };
            rec.push(win.mean_gap_h.map(|g| g.to_string()).unwrap_or_default());
            rec.push(win.n_rows.to_string());
            rec.push(win.n_treated.to_string());
            rec.push(win.error.clone().unwrap_or_default());
            w.write_record(rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::BadSpec(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, config: &PipelineConfig) -> Result<()> {
        Ok(std::fs::write(path.as_ref(), self.to_csv(config)?)?)
    }
}

/// Re-runs the full pipeline under each eligibility window, reporting the
/// per-window effect alongside the mean inclusion-to-treatment gap — the
/// temporal blank period that manufactures immortal time. Windows must be
/// strictly increasing; they run in parallel and are reported in order, with
/// per-window failures captured as error tags.
pub fn run_itb_sweep(
    store: &EventStore,
    protocol: &TrialProtocol,
    windows_h: &[f64],
    config: &PipelineConfig,
) -> Result<ItbSweepReport> {
    if windows_h.is_empty() {
        return Err(Error::BadConfig("eligibility sweep needs at least one window".into()));
    }
    if windows_h.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::BadConfig("eligibility windows must be positive and finite".into()));
    }
    if windows_h.windows(2).any(|pair| pair[1] <= pair[0]) {
        return Err(Error::BadConfig("eligibility windows must be strictly increasing".into()));
    }
    config.validate()?;
    protocol.validate()?;

    let windows: Vec<ItbWindow> = windows_h
        .par_iter()
        .map(|&w| {
            let p = protocol.with_window(w);
            match prepare(store, &p, config.aggregation, config.window_rule) {
                Err(e) => ItbWindow {
                    window_h: w,
                    mean_gap_h: None,
                    n_rows: 0,
                    n_treated: 0,
                    estimate: None,
                    error: Some(e.to_string()),
                },
                Ok(prep) => {
                    let mean_gap_h = mean_treatment_gap(&prep.rows);
                    let n_treated = prep.rows.iter().filter(|r| r.a == 1).count();
                    let (estimate, error) = match estimate_effect_prepared(&prep, &p, config) {
                        Ok(est) => (Some(est), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    ItbWindow {
                        window_h: w,
                        mean_gap_h,
                        n_rows: prep.rows.len(),
                        n_treated,
                        estimate,
                        error,
                    }
                }
            }
        })
        .collect();
    Ok(ItbSweepReport { windows })
}
