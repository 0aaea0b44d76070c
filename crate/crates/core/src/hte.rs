//! Framework Step 5: conditional average treatment effects.
//!
//! The estimator is the double-machine-learning residual-on-residual
//! regression with a linear final stage: cross-fitted nuisances produce
//! treatment residuals `ã = a − ê(x)` and outcome residuals `ỹ = y − m̂(x)`
//! on a training split, and the effect function `τ(x) = θ₀ + θᵀx_cate` is
//! the ridge-penalized minimizer of `Σ(ỹ − τ(x)·ã)²`. Subgroup summaries
//! are computed from predictions on a held-out test split only, so reported
//! heterogeneity is never an artifact of in-sample fitting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::cohort::TrialProtocol;
use crate::diagnostics::stratified_split;
use crate::error::{Error, Result};
use crate::events::EventStore;
use crate::features::{aggregate_codes, apply_imputer_plain, fit_imputer};
use crate::matrix::{solve_spd, Matrix};
use crate::nuisance::cross_fit_predict;
use crate::nuisance::CrossFitPlan;
use crate::pipeline::{prepare, resolve_nuisances, EstimatorId, PipelineConfig};
use crate::util::{derive_seed, quantile_type7, sort_f64};

/// Ridge penalty of the final CATE regression. Small on purpose: the final
/// stage is a low-dimensional linear model and the penalty exists only to
/// keep near-collinear effect modifiers solvable.
pub const CATE_RIDGE_ALPHA: f64 = 1e-3;

const STREAM_HTE_SPLIT: u64 = 0x11E5;
const STREAM_HTE_PLAN: u64 = 0xCA7E;
const TRAIN_FRACTION: f64 = 0.8;

/// Linear conditional-effect model `τ(x) = intercept + coefficients · x`.
/// The intercept is never penalized, so with no effect modifiers the model
/// collapses to the constant-effect DML estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub alpha: f64,
}

/// Fits the linear CATE stage on nuisance residuals: solves the ridge
/// system in the transformed design whose columns are `ã` (intercept) and
/// `ã ⊙ x_j` for each heterogeneity feature, with the penalty applied to
/// slopes only. Closed form and deterministic.
pub fn fit_cate_dml(
    y_tilde: &[f64],
    a_tilde: &[f64],
    x_cate: &Matrix,
    alpha: f64,
) -> Result<CateModel> {
    if a_tilde.len() != y_tilde.len() {
        return Err(Error::DimensionMismatch { expected: y_tilde.len(), found: a_tilde.len() });
    }
    if x_cate.rows() != y_tilde.len() {
        return Err(Error::DimensionMismatch { expected: y_tilde.len(), found: x_cate.rows() });
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::BadSpec(format!("ridge alpha must be non-negative, got {alpha}")));
    }
    let n = y_tilde.len();
    let p = x_cate.cols();
    let den: f64 = a_tilde.iter().map(|v| v * v).sum();
    if den < 1e-12 {
        return Err(Error::DegenerateTreatmentResiduals);
    }
    if p == 0 {
        // Scalar path, numerically identical to the constant-effect DML
        // estimator on the same residuals.
        let num: f64 = a_tilde.iter().zip(y_tilde).map(|(a, y)| a * y).sum();
        return Ok(CateModel { intercept: num / den, coefficients: Vec::new(), alpha });
    }
    let mut design = Matrix::zeros(n, p + 1);
    for i in 0..n {
        design.set(i, 0, a_tilde[i]);
        for j in 0..p {
            design.set(i, j + 1, a_tilde[i] * x_cate.get(i, j));
        }
    }
    let mut gram = design.gram();
    for j in 1..=p {
        gram.set(j, j, gram.get(j, j) + alpha);
    }
    let rhs = design.t_mul_vec(y_tilde);
    let beta = solve_spd(&gram, &rhs).ok_or(Error::SingularSystem)?;
    Ok(CateModel { intercept: beta[0], coefficients: beta[1..].to_vec(), alpha })
}

/// Predicted conditional effects, one per row of `x_cate`.
pub fn predict_cate(model: &CateModel, x_cate: &Matrix) -> Result<Vec<f64>> {
    if x_cate.cols() != model.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: model.coefficients.len(),
            found: x_cate.cols(),
        });
    }
    Ok((0..x_cate.rows())
        .map(|i| {
            model.intercept
                + model
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * x_cate.get(i, j))
                    .sum::<f64>()
        })
        .collect())
}

/// Boxplot statistics of the predicted effects inside one stratum of one
/// subgroup. Quantiles follow the linear-interpolation (type-7) convention;
/// whiskers extend 1.5×IQR past the quartiles but clamp to the observed
/// extremes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupStats {
    pub group: String,
    pub stratum: bool,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub rows: Vec<SubgroupStats>,
}

pub const SUBGROUP_CSV_HEADER: &str = "group,stratum,q25,median,q75,lo_whisker,hi_whisker,n";

impl SubgroupReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUBGROUP_CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.group.as_str(),
                &r.stratum.to_string(),
                &r.q25.to_string(),
                &r.median.to_string(),
                &r.q75.to_string(),
                &r.lo_whisker.to_string(),
                &r.hi_whisker.to_string(),
                &r.n.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::BadSpec(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path.as_ref(), self.to_csv()?)?)
    }
}

fn box_stats(group: &str, stratum: bool, values: &[f64]) -> SubgroupStats {
    let mut sorted = values.to_vec();
    sort_f64(&mut sorted);
    let q25 = quantile_type7(&sorted, 0.25);
    let median = quantile_type7(&sorted, 0.5);
    let q75 = quantile_type7(&sorted, 0.75);
    let iqr = q75 - q25;
    SubgroupStats {
        group: group.to_string(),
        stratum,
        q25,
        median,
        q75,
        lo_whisker: (q25 - 1.5 * iqr).max(sorted[0]),
        hi_whisker: (q75 + 1.5 * iqr).min(sorted[sorted.len() - 1]),
        n: sorted.len(),
    }
}

/// Splits predicted effects along each declared binary subgroup and reports
/// boxplot statistics per stratum, `false` stratum first. Groups are an
/// ordered list so the report layout is deterministic.
pub fn subgroup_summary(
    cate_pred: &[f64],
    groups: &[(String, Vec<bool>)],
) -> Result<SubgroupReport> {
    let mut rows = Vec::with_capacity(groups.len() * 2);
    for (name, members) in groups {
        if members.len() != cate_pred.len() {
            return Err(Error::DimensionMismatch {
                expected: cate_pred.len(),
                found: members.len(),
            });
        }
        for stratum in [false, true] {
            let values: Vec<f64> = cate_pred
                .iter()
                .zip(members)
                .filter(|(_, &m)| m == stratum)
                .map(|(&v, _)| v)
                .collect();
            if values.is_empty() {
                return Err(Error::EmptyStratum { group: name.clone(), stratum });
            }
            rows.push(box_stats(name, stratum, &values));
        }
    }
    Ok(SubgroupReport { rows })
}

/// Heterogeneity analysis of one emulated trial: the fitted CATE model, the
/// held-out predictions, and subgroup boxplots along every declared effect
/// modifier (split at its training-split median).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HteReport {
    pub model: CateModel,
    /// Effect-modifier column names, aligned with `model.coefficients`.
    pub feature_names: Vec<String>,
    pub subgroups: SubgroupReport,
    /// Patients of the test split, aligned with `cate_test`.
    pub test_patient_ids: Vec<String>,
    pub cate_test: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

impl HteReport {
    /// Per-test-row predictions as CSV with schema `patient_id,cate`.
    pub fn cate_to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["patient_id", "cate"])?;
        for (id, v) in self.test_patient_ids.iter().zip(&self.cate_test) {
            w.write_record([id.as_str(), &v.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::BadSpec(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_cate_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path.as_ref(), self.cate_to_csv()?)?)
    }
}

/// Runs the full heterogeneity pipeline on an event store.
///
/// The cohort splits 80/20 (stratified on treatment); nuisances are
/// resolved and cross-fitted on the training split only; the final ridge
/// stage fits on training residuals; predictions and subgroup summaries use
/// the disjoint test split. The pipeline config supplies aggregation,
/// window rule, nuisance family, folds, clipping and seed — the estimator
/// is intrinsically DML and the config's estimator choice is ignored.
pub fn run_hte(
    store: &EventStore,
    protocol: &TrialProtocol,
    config: &PipelineConfig,
) -> Result<HteReport> {
    protocol.validate()?;
    if protocol.cate_codes.is_empty() {
        return Err(Error::BadProtocol(
            "heterogeneity analysis needs at least one cate_code in the protocol".into(),
        ));
    }
    let mut cfg = config.clone();
    cfg.estimator = EstimatorId::Dml;
    cfg.validate()?;

    let prep = prepare(store, protocol, cfg.aggregation, cfg.window_rule)?;
    let x_cate_dm = aggregate_codes(
        store,
        &prep.rows,
        protocol,
        &protocol.cate_codes,
        cfg.aggregation,
        cfg.window_rule,
        true,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_HTE_SPLIT));
    let (train, test) = stratified_split(&prep.a, TRAIN_FRACTION, &mut rng)?;
    assert!(
        train.iter().all(|i| test.binary_search(i).is_err()),
        "train/test splits must be disjoint"
    );

    let dm_train = prep.dm.select_rows(&train);
    let a_train: Vec<f64> = train.iter().map(|&i| prep.a[i]).collect();
    let y_train: Vec<f64> = train.iter().map(|&i| prep.y[i]).collect();
    let pair = resolve_nuisances(&dm_train, &a_train, &y_train, &cfg)?;
    let plan =
        CrossFitPlan::new(train.len(), cfg.k_folds, derive_seed(cfg.seed, STREAM_HTE_PLAN))?;
    let e_hat = cross_fit_predict(&pair.propensity, &dm_train, &a_train, &plan)?;
    let m_hat = cross_fit_predict(&pair.outcome, &dm_train, &y_train, &plan)?;
    let a_tilde: Vec<f64> = a_train
        .iter()
        .zip(&e_hat)
        .map(|(a, e)| a - e.clamp(cfg.clip, 1.0 - cfg.clip))
        .collect();
    let y_tilde: Vec<f64> = y_train.iter().zip(&m_hat).map(|(y, m)| y - m).collect();

    let imp = fit_imputer(&x_cate_dm, &train)?;
    let x_train = apply_imputer_plain(&imp, &x_cate_dm, &train)?;
    let x_test = apply_imputer_plain(&imp, &x_cate_dm, &test)?;
    let model = fit_cate_dml(&y_tilde, &a_tilde, &x_train.values, CATE_RIDGE_ALPHA)?;
    let cate_test = predict_cate(&model, &x_test.values)?;

    // One subgroup per effect modifier, thresholded at its training median
    // so the test split never informs its own stratification.
    let mut groups = Vec::with_capacity(x_train.cols());
    for (j, name) in x_train.column_names.iter().enumerate() {
        let mut col: Vec<f64> = (0..x_train.rows()).map(|r| x_train.values.get(r, j)).collect();
        sort_f64(&mut col);
        let threshold = quantile_type7(&col, 0.5);
        let members: Vec<bool> =
            (0..x_test.rows()).map(|r| x_test.values.get(r, j) > threshold).collect();
        groups.push((name.clone(), members));
    }
    let subgroups = subgroup_summary(&cate_test, &groups)?;

    Ok(HteReport {
        model,
        feature_names: x_train.column_names.clone(),
        subgroups,
        test_patient_ids: test.iter().map(|&i| prep.rows[i].patient_id.clone()).collect(),
        cate_test,
        n_train: train.len(),
        n_test: test.len(),
    })
}
