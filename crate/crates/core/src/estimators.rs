//! Causal effect estimators and bootstrap confidence intervals.
//!
//! Five estimator families over pre-computed (cross-fitted) nuisance
//! predictions: propensity-score matching, inverse propensity weighting,
//! the G-formula, the augmented (doubly robust) estimator, and the
//! partially linear DML estimator. Confidence intervals come from a
//! percentile bootstrap that re-runs the caller's whole pipeline on each
//! resample.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{derive_seed, logit, mean, quantile_type6, sample_variance, sort_f64};

/// Default propensity clip applied inside the weighting estimators,
/// independent of any floor the nuisance models themselves apply.
pub const DEFAULT_CLIP: f64 = 0.01;

/// Default caliper width in units of the standard deviation of the
/// propensity logit.
pub const DEFAULT_CALIPER_SD: f64 = 0.2;

/// Default number of bootstrap replicates.
pub const DEFAULT_N_BOOT: usize = 50;

/// How a treated-vs-control contrast of potential-outcome means is reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    RiskDifference,
    RiskRatio,
}

impl EstimandKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimandKind::RiskDifference => "risk_difference",
            EstimandKind::RiskRatio => "risk_ratio",
        }
    }
}

impl std::fmt::Display for EstimandKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Estimated potential-outcome means `E[Y(1)]` and `E[Y(0)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialMeans {
    pub m1: f64,
    pub m0: f64,
}

/// Turns potential means into the requested contrast.
pub fn point_from_means(means: &PotentialMeans, estimand: EstimandKind) -> Result<f64> {
    match estimand {
        EstimandKind::RiskDifference => Ok(means.m1 - means.m0),
        EstimandKind::RiskRatio => {
            if means.m0 == 0.0 {
                Err(Error::ZeroControlMean)
            } else {
                Ok(means.m1 / means.m0)
            }
        }
    }
}

/// The analytic choices behind one estimate — the provenance record that
/// makes a vibration-analysis row self-describing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticChoices {
    /// Confounder aggregation label, e.g. `"last"`.
    pub aggregation: String,
    /// Nuisance family label, e.g. `"linear"` or `"forest"`.
    pub nuisance: String,
    /// Eligibility window length in hours.
    pub window_h: f64,
    pub seed: u64,
}

/// A point estimate with optional bootstrap interval and full provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator_id: String,
    pub estimand: EstimandKind,
    pub point: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Number of bootstrap replicates behind the interval (0 when no
    /// interval was requested).
    pub n_boot: usize,
    pub choices: AnalyticChoices,
    /// Methodological warning carried with the row, e.g. that matching
    /// targets the treated population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

pub const EFFECTS_CSV_HEADER: &str =
    "estimator_id,estimand,point,ci_low,ci_high,n_boot,aggregation,nuisance,window_h,seed";

impl EffectEstimate {
    /// The estimate as one CSV record matching [`EFFECTS_CSV_HEADER`];
    /// missing interval bounds become empty cells.
    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.estimator_id.clone(),
            self.estimand.as_str().to_string(),
            self.point.to_string(),
            self.ci_low.map(|v| v.to_string()).unwrap_or_default(),
            self.ci_high.map(|v| v.to_string()).unwrap_or_default(),
            self.n_boot.to_string(),
            self.choices.aggregation.clone(),
            self.choices.nuisance.clone(),
            self.choices.window_h.to_string(),
            self.choices.seed.to_string(),
        ]
    }
}

/// Serializes estimates to CSV text (header + one row per estimate).
pub fn effects_to_csv(estimates: &[EffectEstimate]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EFFECTS_CSV_HEADER.split(','))?;
    for e in estimates {
        w.write_record(e.csv_record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::BadSpec(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_effects_csv(path: &Path, estimates: &[EffectEstimate]) -> Result<()> {
    Ok(std::fs::write(path, effects_to_csv(estimates)?)?)
}

fn check_lens(lens: &[usize]) -> Result<()> {
    let first = lens[0];
    if first == 0 {
        return Err(Error::BadSpec("estimator inputs must be non-empty".into()));
    }
    for &l in &lens[1..] {
        if l != first {
            return Err(Error::DimensionMismatch { expected: first, found: l });
        }
    }
    Ok(())
}

fn check_binary(a: &[f64]) -> Result<()> {
    if a.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::BadSpec("treatment vector must be 0/1".into()));
    }
    Ok(())
}

fn check_clip(clip: f64) -> Result<()> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Error::BadSpec(format!("clip must lie in (0, 0.5), got {clip}")));
    }
    Ok(())
}

/// G-formula (conditional mean regression) estimator:
/// averages modeled potential outcomes, `point = m1 − m0` or `m1/m0`.
pub fn ate_gformula(
    mu1_hat: &[f64],
    mu0_hat: &[f64],
    estimand: EstimandKind,
) -> Result<(PotentialMeans, f64)> {
    check_lens(&[mu1_hat.len(), mu0_hat.len()])?;
    let means = PotentialMeans { m1: mean(mu1_hat), m0: mean(mu0_hat) };
    let point = point_from_means(&means, estimand)?;
    Ok((means, point))
}

/// Horvitz–Thompson inverse propensity weighting with clipped propensities:
/// `m1 = (1/n) Σ aᵢyᵢ/êᵢ`, `m0 = (1/n) Σ (1−aᵢ)yᵢ/(1−êᵢ)`.
pub fn ate_ipw(
    e_hat: &[f64],
    a: &[f64],
    y: &[f64],
    clip: f64,
    estimand: EstimandKind,
) -> Result<(PotentialMeans, f64)> {
    check_lens(&[e_hat.len(), a.len(), y.len()])?;
    check_binary(a)?;
    check_clip(clip)?;
    let n = y.len() as f64;
    let (mut s1, mut s0) = (0.0, 0.0);
    for i in 0..y.len() {
        let e = e_hat[i].clamp(clip, 1.0 - clip);
        s1 += a[i] * y[i] / e;
        s0 += (1.0 - a[i]) * y[i] / (1.0 - e);
    }
    let means = PotentialMeans { m1: s1 / n, m0: s0 / n };
    let point = point_from_means(&means, estimand)?;
    Ok((means, point))
}

/// Augmented IPW (doubly robust): the G-formula plug-in plus inverse-
/// weighted residual corrections,
/// `m1 = (1/n) Σ [μ̂₁ + a(y−μ̂₁)/ê]` and symmetrically for `m0`.
pub fn ate_aipw(
    mu1_hat: &[f64],
    mu0_hat: &[f64],
    e_hat: &[f64],
    a: &[f64],
    y: &[f64],
    clip: f64,
    estimand: EstimandKind,
) -> Result<(PotentialMeans, f64)> {
    check_lens(&[mu1_hat.len(), mu0_hat.len(), e_hat.len(), a.len(), y.len()])?;
    check_binary(a)?;
    check_clip(clip)?;
    let n = y.len() as f64;
    let (mut s1, mut s0) = (0.0, 0.0);
    for i in 0..y.len() {
        let e = e_hat[i].clamp(clip, 1.0 - clip);
        s1 += mu1_hat[i] + a[i] * (y[i] - mu1_hat[i]) / e;
        s0 += mu0_hat[i] + (1.0 - a[i]) * (y[i] - mu0_hat[i]) / (1.0 - e);
    }
    let means = PotentialMeans { m1: s1 / n, m0: s0 / n };
    let point = point_from_means(&means, estimand)?;
    Ok((means, point))
}

/// Partially linear DML estimator: the constant-effect minimizer of the
/// R-loss, `θ̂ = Σ(aᵢ−êᵢ)(yᵢ−m̂ᵢ) / Σ(aᵢ−êᵢ)²` with clipped `ê`. Additive by
/// construction, so it reports risk differences only.
pub fn ate_dml(m_hat: &[f64], e_hat: &[f64], a: &[f64], y: &[f64], clip: f64) -> Result<f64> {
    check_lens(&[m_hat.len(), e_hat.len(), a.len(), y.len()])?;
    check_binary(a)?;
    check_clip(clip)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        let e = e_hat[i].clamp(clip, 1.0 - clip);
        let a_res = a[i] - e;
        num += a_res * (y[i] - m_hat[i]);
        den += a_res * a_res;
    }
    if den < 1e-12 {
        return Err(Error::DegenerateTreatmentResiduals);
    }
    Ok(num / den)
}

/// 1:1 nearest-neighbor propensity matching without replacement on the
/// propensity logit. The caliper is `caliper_sd` standard deviations of the
/// pooled logit; greedy order is treated patients by descending propensity.
/// Returns (mean matched-pair difference, number of pairs). Matching without
/// replacement targets the treated population, so pipelines label this row
/// ATT.
pub fn ate_psm(e_hat: &[f64], a: &[f64], y: &[f64], caliper_sd: f64) -> Result<(f64, usize)> {
    check_lens(&[e_hat.len(), a.len(), y.len()])?;
    check_binary(a)?;
    if !(caliper_sd > 0.0) {
        return Err(Error::BadSpec(format!("caliper_sd must be positive, got {caliper_sd}")));
    }
    // Guard the logit against exactly-0/1 propensities from upstream.
    let logits: Vec<f64> =
        e_hat.iter().map(|&e| logit(e.clamp(1e-6, 1.0 - 1e-6))).collect();
    let caliper = caliper_sd * sample_variance(&logits).sqrt();

    let mut treated: Vec<usize> = (0..a.len()).filter(|&i| a[i] == 1.0).collect();
    let controls: Vec<usize> = (0..a.len()).filter(|&i| a[i] == 0.0).collect();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::SingleArm);
    }
    // Descending propensity; index ascending on exact ties for determinism.
    treated.sort_by(|&p, &q| e_hat[q].total_cmp(&e_hat[p]).then(p.cmp(&q)));

    let mut unmatched = controls;
    let mut diff_sum = 0.0;
    let mut n_matched = 0usize;
    for &t in &treated {
        if unmatched.is_empty() {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for (slot, &c) in unmatched.iter().enumerate() {
            let dist = (logits[t] - logits[c]).abs();
            if best.as_ref().map_or(true, |&(_, b)| dist < b) {
                best = Some((slot, dist));
            }
        }
        let (slot, dist) = best.expect("non-empty pool");
        if dist <= caliper {
            let c = unmatched.swap_remove(slot);
            diff_sum += y[t] - y[c];
            n_matched += 1;
        }
    }
    if n_matched == 0 {
        return Err(Error::NoMatches);
    }
    Ok((diff_sum / n_matched as f64, n_matched))
}

/// Draws the resampled row indices for one bootstrap replicate attempt.
fn resample_indices(n_rows: usize, seed: u64, replicate: usize, attempt: u64) -> Vec<usize> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, replicate as u64), attempt));
    (0..n_rows).map(|_| rng.gen_range(0..n_rows)).collect()
}

/// Runs `b` bootstrap replicates of `point_fn` over resampled row indices
/// and returns the replicate points in replicate order. A replicate whose
/// pipeline fails (or returns a non-finite point) is redrawn up to five
/// times before the whole bootstrap aborts with the replicate index.
/// Replicates run in parallel; results are reduced in index order.
pub fn bootstrap_points<F>(point_fn: &F, n_rows: usize, b: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::BadSpec(format!("bootstrap needs at least 2 replicates, got {b}")));
    }
    if n_rows == 0 {
        return Err(Error::EmptyCohort);
    }
    let runs: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|replicate| {
            for attempt in 0..6u64 {
                let idx = resample_indices(n_rows, seed, replicate, attempt);
                match point_fn(&idx) {
                    Ok(v) if v.is_finite() => return Ok(v),
                    Ok(_) | Err(_) => continue,
                }
            }
            Err(Error::ResampleFailure { replicate })
        })
        .collect();
    runs.into_iter().collect()
}

/// Percentile bootstrap interval at level `alpha` from `b` replicates of the
/// caller's full pipeline (imputation, nuisance fits, estimator — everything
/// the closure chooses to re-run). Deterministic given `seed`.
pub fn bootstrap_ci<F>(
    point_fn: &F,
    n_rows: usize,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadSpec(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut points = bootstrap_points(point_fn, n_rows, b, seed)?;
    sort_f64(&mut points);
    Ok((quantile_type6(&points, alpha / 2.0), quantile_type6(&points, 1.0 - alpha / 2.0)))
}
