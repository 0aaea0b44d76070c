//! Synthetic data generators with counterfactual ground truth.
//!
//! Each scenario emits an [`EventStore`] shaped like a real extract —
//! admissions, timestamped measurements, drug administrations, outcome
//! events — together with a [`GroundTruth`] carrying both potential outcomes
//! and the true propensity for every patient, so that estimators can be
//! scored against an exact oracle instead of asymptotic arguments.
//!
//! Mechanisms:
//! - `LinearConfounding` / `HeterogeneousLinear`: linear confounding with a
//!   constant (or `x`-dependent) additive effect on a latent outcome.
//! - `NonlinearConfounding`: confounding through pairwise products and
//!   centered squares of the covariates, so purely linear adjustment is
//!   misspecified.
//! - `ImmortalTime`: a null treatment whose administration is delayed;
//!   patients who die early never live long enough to receive it, making
//!   ever-treated comparisons look protective.
//! - `SelectionBias`: a billing code required for inclusion is recorded for
//!   every treated patient but only severity-dependently for controls.
//! - `Shortcut`: a post-treatment marker that tracks the outcome latent far
//!   more cleanly than any pre-treatment covariate, plus a second marker
//!   caused by both treatment and outcome (a collider).
//!
//! All randomness flows through a ChaCha generator seeded from the scenario
//! seed with a fixed per-patient draw order, so generation is byte-identical
//! across runs and platforms.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::TrialProtocol;
use crate::dag::DagSpec;
use crate::error::{Error, Result};
use crate::events::{EventKind, EventRecord, EventStore, DEATH_CODE};
use crate::util::{mean, sigmoid};

/// Code of the admission event in tabular scenarios.
pub const ADMISSION_CODE: &str = "admission";
/// Drug code of the studied treatment.
pub const TREATMENT_CODE: &str = "albumin";
/// Drug code of the inclusion-defining control fluid (immortal-time
/// scenario).
pub const INCLUSION_FLUID_CODE: &str = "crystalloids";
/// Procedure code required for inclusion in the selection-bias scenario.
pub const BILLING_CODE: &str = "sepsis_billing";
/// Post-treatment severity marker (shortcut scenario).
pub const POST_MARKER_CODE: &str = "post_marker";
/// Marker caused by both treatment and outcome (shortcut scenario).
pub const COLLIDER_MARKER_CODE: &str = "collider_marker";

const MEASUREMENT_T_LO: f64 = 2.0;
const MEASUREMENT_T_SPAN: f64 = 10.0;
const DRUG_T: f64 = 18.0;
const POST_MARKER_T: f64 = 20.0;
const COLLIDER_MARKER_T: f64 = 21.0;
const OUTCOME_T: f64 = 300.0;
const BILLING_T: f64 = 0.5;

// Shortcut marker shape: the marker repeats the outcome latent with a small
// treatment shift and little noise, so a classifier that sees it stops
// looking at the pre-treatment covariates.
const MARKER_TREAT_SHIFT: f64 = 0.3;
const MARKER_NOISE_SD: f64 = 0.08;
const COLLIDER_TREAT_COEF: f64 = 1.0;
const COLLIDER_OUTCOME_COEF: f64 = 1.0;
const COLLIDER_NOISE_SD: f64 = 0.5;

// Immortal-time scenario: two-phase death hazard (per hour) and the horizon
// used for the oracle potential outcomes. Deaths concentrate in an acute
// phase covering the first days, as in ICU stays; with a flat hazard on the
// 28-day scale, surviving a 1-3 day immortal period would barely shift
// 28-day mortality and the bias would be invisible.
const ITB_ACUTE_WINDOW_H: f64 = 72.0;
const ITB_ACUTE_DEATH_RATE: f64 = 1.0 / 120.0;
const ITB_LATE_DEATH_RATE: f64 = 1.0 / 4000.0;
const ITB_ORACLE_HORIZON_H: f64 = 672.0;

// Selection-bias scenario: slope of the severity -> coding probability link.
const CODING_SEVERITY_SLOPE: f64 = 1.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LinearConfounding,
    NonlinearConfounding,
    ImmortalTime,
    SelectionBias,
    Shortcut,
    HeterogeneousLinear,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::LinearConfounding => "linear_confounding",
            ScenarioKind::NonlinearConfounding => "nonlinear_confounding",
            ScenarioKind::ImmortalTime => "immortal_time",
            ScenarioKind::SelectionBias => "selection_bias",
            ScenarioKind::Shortcut => "shortcut",
            ScenarioKind::HeterogeneousLinear => "heterogeneous_linear",
        }
    }
}

/// Treatment effect: a scalar for homogeneous scenarios, a two-element
/// vector `[tau0, tau1]` for `heterogeneous_linear` where the per-patient
/// effect is `tau0 + tau1 * x0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl TauSpec {
    fn as_vec(&self) -> Vec<f64> {
        match self {
            TauSpec::Scalar(v) => vec![*v],
            TauSpec::Vector(v) => v.clone(),
        }
    }
}

/// Scenario knobs. Absent knobs resolve to per-scenario defaults chosen so
/// that each mechanism is clearly expressed while positivity still holds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Knobs {
    /// Confounding strength on the treatment side.
    pub beta_a: Option<f64>,
    /// Confounding strength on the outcome side.
    pub beta_y: Option<f64>,
    /// Outcome noise scale (proxy noise in the immortal-time scenario).
    pub sigma: Option<f64>,
    /// Treatment-delay rate per hour (immortal-time scenario).
    pub lambda: Option<f64>,
    /// Missingness coupling: how strongly control coding tracks severity
    /// (selection-bias scenario).
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: ScenarioKind,
    /// Number of patients (at least 2).
    pub n: usize,
    /// Number of baseline covariates / severity proxies (at least 1).
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    pub tau: TauSpec,
    #[serde(default)]
    pub knobs: Knobs,
    /// Threshold the latent outcome at zero into a binary endpoint (and emit
    /// outcome events). Scenarios whose endpoint is inherently binary
    /// (immortal time, selection bias, shortcut) ignore this and are always
    /// binary.
    #[serde(default)]
    pub binary_outcome: bool,
}

impl ScenarioSpec {
    pub fn new(name: ScenarioKind, n: usize, d: usize, seed: u64, tau: TauSpec) -> Self {
        ScenarioSpec { name, n, d, seed, tau, knobs: Knobs::default(), binary_outcome: false }
    }

    /// Validates the spec and fills in per-scenario knob defaults.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        if self.n < 2 {
            return Err(Error::BadSpec(format!("n must be at least 2, got {}", self.n)));
        }
        if self.d < 1 {
            return Err(Error::BadSpec("d must be at least 1".into()));
        }
        let (beta_a, beta_y, sigma) = match self.name {
            ScenarioKind::LinearConfounding
            | ScenarioKind::HeterogeneousLinear
            | ScenarioKind::SelectionBias
            | ScenarioKind::Shortcut => (1.0, 1.0, 1.0),
            ScenarioKind::NonlinearConfounding => (2.0, 2.0, 1.0),
            ScenarioKind::ImmortalTime => (0.0, 0.5, 0.3),
        };
        let beta_a = self.knobs.beta_a.unwrap_or(beta_a);
        let beta_y = self.knobs.beta_y.unwrap_or(beta_y);
        let sigma = self.knobs.sigma.unwrap_or(sigma);
        let lambda = self.knobs.lambda.unwrap_or(1.0 / 48.0);
        let gamma = self.knobs.gamma.unwrap_or(0.8);
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::BadSpec("sigma must be finite and non-negative".into()));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::BadSpec("lambda must be finite and positive".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::BadSpec("gamma must lie in [0, 1]".into()));
        }
        if !beta_a.is_finite() || !beta_y.is_finite() {
            return Err(Error::BadSpec("beta_a and beta_y must be finite".into()));
        }
        let tau = self.tau.as_vec();
        match self.name {
            ScenarioKind::HeterogeneousLinear => {
                if tau.len() != 2 {
                    return Err(Error::BadSpec(
                        "heterogeneous_linear needs tau = [tau0, tau1]".into(),
                    ));
                }
            }
            ScenarioKind::ImmortalTime => {
                if tau != vec![0.0] {
                    return Err(Error::BadSpec(
                        "immortal_time models a null treatment; tau must be 0".into(),
                    ));
                }
            }
            _ => {
                if tau.len() != 1 {
                    return Err(Error::BadSpec("tau must be a scalar for this scenario".into()));
                }
            }
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::BadSpec("tau must be finite".into()));
        }
        let binary_outcome = match self.name {
            ScenarioKind::ImmortalTime
            | ScenarioKind::SelectionBias
            | ScenarioKind::Shortcut => true,
            _ => self.binary_outcome,
        };
        Ok(ResolvedScenario {
            name: self.name,
            n: self.n,
            d: self.d,
            seed: self.seed,
            tau,
            beta_a,
            beta_y,
            sigma,
            lambda,
            gamma,
            binary_outcome,
        })
    }
}

/// A fully validated scenario with every default made explicit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedScenario {
    pub name: ScenarioKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub tau: Vec<f64>,
    pub beta_a: f64,
    pub beta_y: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub binary_outcome: bool,
}

impl ResolvedScenario {
    /// Spec with all resolved values spelled out, for config echoing.
    pub fn echo_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            name: self.name,
            n: self.n,
            d: self.d,
            seed: self.seed,
            tau: if self.tau.len() == 1 {
                TauSpec::Scalar(self.tau[0])
            } else {
                TauSpec::Vector(self.tau.clone())
            },
            knobs: Knobs {
                beta_a: Some(self.beta_a),
                beta_y: Some(self.beta_y),
                sigma: Some(self.sigma),
                lambda: Some(self.lambda),
                gamma: Some(self.gamma),
            },
            binary_outcome: self.binary_outcome,
        }
    }
}

/// Per-patient potential outcomes and true propensities. Rows align with
/// `patient_ids`; `ate_oracle` is exactly `mean(y1 - y0)` over all generated
/// patients (including, in the selection-bias scenario, patients missing
/// from the event store).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patient_ids: Vec<String>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub e_true: Vec<f64>,
    pub ate_oracle: f64,
}

impl GroundTruth {
    fn from_parts(patient_ids: Vec<String>, y0: Vec<f64>, y1: Vec<f64>, e_true: Vec<f64>) -> Self {
        let ate_oracle = oracle_ate_of(&y0, &y1);
        GroundTruth { patient_ids, y0, y1, e_true, ate_oracle }
    }

    /// Oracle average treatment effect on the treated.
    pub fn att_oracle(&self, a: &[f64]) -> f64 {
        let diffs: Vec<f64> = self
            .y0
            .iter()
            .zip(&self.y1)
            .zip(a)
            .filter(|(_, ai)| **ai > 0.5)
            .map(|((y0, y1), _)| y1 - y0)
            .collect();
        mean(&diffs)
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["patient_id", "y0", "y1", "e_true"])?;
        for i in 0..self.patient_ids.len() {
            w.write_record([
                self.patient_ids[i].as_str(),
                &format!("{}", self.y0[i]),
                &format!("{}", self.y1[i]),
                &format!("{}", self.e_true[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Recomputes the oracle average treatment effect from the potential
/// outcomes.
pub fn oracle_ate(gt: &GroundTruth) -> f64 {
    oracle_ate_of(&gt.y0, &gt.y1)
}

fn oracle_ate_of(y0: &[f64], y1: &[f64]) -> f64 {
    let diffs: Vec<f64> = y0.iter().zip(y1).map(|(a, b)| b - a).collect();
    mean(&diffs)
}

/// Maps a raw linear score into a propensity bounded away from 0 and 1:
/// `0.02 + 0.96 * sigmoid(z)`. Keeps positivity structurally true for every
/// knob setting and maps `z = 0` to exactly `0.5`.
pub fn bounded_propensity(z: f64) -> f64 {
    0.02 + 0.96 * sigmoid(z)
}

/// `p{index}` zero-padded; width grows with `n` (at least 5).
pub fn patient_id(index: usize, n: usize) -> String {
    format!("p{:0width$}", index, width = id_width(n))
}

fn id_width(n: usize) -> usize {
    std::cmp::max(5, n.saturating_sub(1).to_string().len())
}

/// Parses the row index back out of a generated patient id.
pub fn patient_index(id: &str) -> Option<usize> {
    id.strip_prefix('p').and_then(|s| s.parse().ok())
}

/// Codes of the baseline covariate measurements: `x00`, `x01`, ...
pub fn covariate_codes(d: usize) -> Vec<String> {
    let width = std::cmp::max(2, d.saturating_sub(1).to_string().len());
    (0..d).map(|j| format!("x{:0width$}", j)).collect()
}

/// Codes of the severity-proxy measurements in the immortal-time scenario.
pub fn severity_codes(d: usize) -> Vec<String> {
    let width = std::cmp::max(2, d.saturating_sub(1).to_string().len());
    (0..d).map(|j| format!("sev{:0width$}", j)).collect()
}

/// The protocol that matches a generated scenario: inclusion at the
/// scenario's anchoring event, albumin as treatment, death within 28 days as
/// outcome, and the generated covariates as confounders.
///
/// The shortcut scenario's default is deliberately naive: it lists the two
/// post-treatment markers alongside the true confounders, the way an
/// indiscriminate "adjust for everything measured" analysis would. The
/// matching [`scenario_dag`] classifies them as colliders, so the adjustment
/// gate rejects this protocol until the markers are dropped.
pub fn default_protocol(kind: ScenarioKind, d: usize) -> TrialProtocol {
    let (inclusion, confounders, cate) = match kind {
        ScenarioKind::ImmortalTime => {
            (INCLUSION_FLUID_CODE.to_string(), severity_codes(d), Vec::new())
        }
        ScenarioKind::SelectionBias => (BILLING_CODE.to_string(), covariate_codes(d), Vec::new()),
        ScenarioKind::HeterogeneousLinear => {
            let codes = covariate_codes(d);
            let cate = vec![codes[0].clone()];
            (ADMISSION_CODE.to_string(), codes, cate)
        }
        ScenarioKind::Shortcut => {
            let mut codes = covariate_codes(d);
            codes.push(POST_MARKER_CODE.to_string());
            codes.push(COLLIDER_MARKER_CODE.to_string());
            (ADMISSION_CODE.to_string(), codes, Vec::new())
        }
        _ => (ADMISSION_CODE.to_string(), covariate_codes(d), Vec::new()),
    };
    TrialProtocol {
        inclusion_code: inclusion,
        eligibility_window_h: 24.0,
        min_followup_h: 24.0,
        treatment_code: TREATMENT_CODE.to_string(),
        outcome_code: DEATH_CODE.to_string(),
        outcome_horizon_h: 672.0,
        confounder_codes: confounders,
        cate_codes: cate,
        eligibility_filters: Vec::new(),
    }
}

/// The true causal graph of a generated scenario, in serializable form.
/// Covariates (or severity proxies) cause both treatment and outcome; the
/// shortcut scenario's post-treatment markers are children of both, and the
/// selection scenario's billing code is a child of treatment and severity.
pub fn scenario_dag(kind: ScenarioKind, d: usize) -> DagSpec {
    let covariates = match kind {
        ScenarioKind::ImmortalTime => severity_codes(d),
        _ => covariate_codes(d),
    };
    let mut edges = Vec::new();
    for code in &covariates {
        edges.push((code.clone(), TREATMENT_CODE.to_string()));
        edges.push((code.clone(), DEATH_CODE.to_string()));
    }
    edges.push((TREATMENT_CODE.to_string(), DEATH_CODE.to_string()));
    match kind {
        ScenarioKind::Shortcut => {
            for marker in [POST_MARKER_CODE, COLLIDER_MARKER_CODE] {
                edges.push((TREATMENT_CODE.to_string(), marker.to_string()));
                edges.push((DEATH_CODE.to_string(), marker.to_string()));
            }
        }
        ScenarioKind::SelectionBias => {
            edges.push((TREATMENT_CODE.to_string(), BILLING_CODE.to_string()));
            for code in &covariates {
                edges.push((code.clone(), BILLING_CODE.to_string()));
            }
        }
        _ => {}
    }
    DagSpec {
        edges,
        treatment: TREATMENT_CODE.to_string(),
        outcome: DEATH_CODE.to_string(),
    }
}

/// Generates any scenario, dispatching on the kind.
pub fn generate(spec: &ScenarioSpec) -> Result<(EventStore, GroundTruth)> {
    match spec.name {
        ScenarioKind::ImmortalTime => gen_immortal_time(spec),
        ScenarioKind::SelectionBias => gen_selection_bias(spec),
        _ => gen_tabular(spec),
    }
}

/// Nonlinear confounding score: normalized sum of adjacent pairwise products
/// and centered squares, standardized to roughly unit variance.
fn nonlinear_score(x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for j in 0..d.saturating_sub(1) {
        s += x[j] * x[j + 1];
    }
    for v in x {
        s += (v * v - 1.0) / std::f64::consts::SQRT_2;
    }
    s / ((2 * d - 1) as f64).sqrt()
}

/// Tabular scenarios: linear, nonlinear, heterogeneous and shortcut. One
/// admission anchor, `d` timestamped covariate measurements inside the
/// eligibility window, a drug event for treated patients, an outcome event
/// when the (binary) outcome is 1, and for the shortcut scenario two
/// post-treatment markers.
pub fn gen_tabular(spec: &ScenarioSpec) -> Result<(EventStore, GroundTruth)> {
    let rs = spec.resolve()?;
    match rs.name {
        ScenarioKind::LinearConfounding
        | ScenarioKind::NonlinearConfounding
        | ScenarioKind::HeterogeneousLinear
        | ScenarioKind::Shortcut => {}
        other => {
            return Err(Error::BadSpec(format!(
                "gen_tabular does not handle scenario {:?}",
                other
            )))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rs.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let codes = covariate_codes(rs.d);
    let sqrt_d = (rs.d as f64).sqrt();

    let mut records = Vec::new();
    let mut ids = Vec::with_capacity(rs.n);
    let mut y0s = Vec::with_capacity(rs.n);
    let mut y1s = Vec::with_capacity(rs.n);
    let mut es = Vec::with_capacity(rs.n);

    for i in 0..rs.n {
        let id = patient_id(i, rs.n);
        // Fixed draw order per patient: covariates, treatment uniform,
        // outcome noise, then (shortcut only) the two marker noises.
        let x: Vec<f64> = (0..rs.d).map(|_| normal.sample(&mut rng)).collect();
        let u_treat: f64 = rng.gen();
        let eps: f64 = normal.sample(&mut rng);
        let (nu_marker, nu_collider) = if rs.name == ScenarioKind::Shortcut {
            (normal.sample(&mut rng), normal.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };

        let linear_score = x.iter().sum::<f64>() / sqrt_d;
        let (z_treat, g_outcome) = match rs.name {
            ScenarioKind::NonlinearConfounding => {
                let psi = nonlinear_score(&x);
                (rs.beta_a * psi.tanh(), rs.beta_y * psi)
            }
            _ => (rs.beta_a * linear_score, rs.beta_y * linear_score),
        };
        let e = bounded_propensity(z_treat);
        let a = u_treat < e;
        let tau_i = match rs.name {
            ScenarioKind::HeterogeneousLinear => rs.tau[0] + rs.tau[1] * x[0],
            _ => rs.tau[0],
        };
        let lat0 = g_outcome + rs.sigma * eps;
        let lat1 = lat0 + tau_i;
        let (y0, y1) = if rs.binary_outcome {
            ((lat0 > 0.0) as u8 as f64, (lat1 > 0.0) as u8 as f64)
        } else {
            (lat0, lat1)
        };
        let y_obs = if a { y1 } else { y0 };
        let lat_obs = if a { lat1 } else { lat0 };

        records.push(EventRecord::new(&id, 0.0, EventKind::Admission, ADMISSION_CODE, None));
        for (j, code) in codes.iter().enumerate() {
            let t = MEASUREMENT_T_LO + MEASUREMENT_T_SPAN * j as f64 / rs.d as f64;
            records.push(EventRecord::new(&id, t, EventKind::Measurement, code, Some(x[j])));
        }
        if a {
            records.push(EventRecord::new(&id, DRUG_T, EventKind::Drug, TREATMENT_CODE, None));
        }
        if rs.name == ScenarioKind::Shortcut {
            // The marker reads the realized outcome latent with a small
            // treatment shift and little noise — a shortcut that dominates
            // every pre-treatment covariate.
            let marker_value = lat_obs + MARKER_TREAT_SHIFT * (a as u8 as f64)
                + MARKER_NOISE_SD * nu_marker;
            records.push(EventRecord::new(
                &id,
                POST_MARKER_T,
                EventKind::Measurement,
                POST_MARKER_CODE,
                Some(marker_value),
            ));
            let collider_value = COLLIDER_TREAT_COEF * (a as u8 as f64)
                + COLLIDER_OUTCOME_COEF * lat_obs
                + COLLIDER_NOISE_SD * nu_collider;
            records.push(EventRecord::new(
                &id,
                COLLIDER_MARKER_T,
                EventKind::Measurement,
                COLLIDER_MARKER_CODE,
                Some(collider_value),
            ));
        }
        if rs.binary_outcome && y_obs > 0.5 {
            records.push(EventRecord::new(&id, OUTCOME_T, EventKind::Outcome, DEATH_CODE, None));
        }

        ids.push(id);
        y0s.push(y0);
        y1s.push(y1);
        es.push(e);
    }
    let store = EventStore::from_records(records)?;
    Ok((store, GroundTruth::from_parts(ids, y0s, y1s, es)))
}

/// Immortal-time scenario: everyone enters on a control fluid at `t = 0`;
/// severity scales a two-phase death hazard (acute then late); a null
/// follow-on treatment is intended for a coin-flip of patients but
/// administered only after an exponential delay — and only if the patient is
/// still alive. Ever-treated comparisons therefore condition on surviving
/// the delay, and the longer the eligibility window, the more of the acute
/// death hazard the treated arm has provably outlived.
pub fn gen_immortal_time(spec: &ScenarioSpec) -> Result<(EventStore, GroundTruth)> {
    let rs = spec.resolve()?;
    if rs.name != ScenarioKind::ImmortalTime {
        return Err(Error::BadSpec("gen_immortal_time needs the immortal_time scenario".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rs.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let codes = severity_codes(rs.d);

    let mut records = Vec::new();
    let mut ids = Vec::with_capacity(rs.n);
    let mut y0s = Vec::with_capacity(rs.n);
    let mut y1s = Vec::with_capacity(rs.n);
    let mut es = Vec::with_capacity(rs.n);

    for i in 0..rs.n {
        let id = patient_id(i, rs.n);
        // Draw order: severity, d proxy noises, death uniform, intent
        // uniform, delay uniform.
        let severity: f64 = normal.sample(&mut rng);
        let proxies: Vec<f64> =
            (0..rs.d).map(|_| severity + rs.sigma * normal.sample(&mut rng)).collect();
        let u_death: f64 = 1.0 - rng.gen::<f64>();
        let u_intent: f64 = rng.gen();
        let u_delay: f64 = 1.0 - rng.gen::<f64>();

        // Inverse-transform sampling through the piecewise cumulative hazard
        // Λ(t) = r_acute·min(t, T_acute) + r_late·max(0, t − T_acute), with
        // both phase rates scaled by severity (proportional hazards).
        let hazard_scale = (rs.beta_y * severity).exp();
        let r_acute = ITB_ACUTE_DEATH_RATE * hazard_scale;
        let r_late = ITB_LATE_DEATH_RATE * hazard_scale;
        let target = -u_death.ln();
        let acute_budget = r_acute * ITB_ACUTE_WINDOW_H;
        let t_death = if target < acute_budget {
            target / r_acute
        } else {
            ITB_ACUTE_WINDOW_H + (target - acute_budget) / r_late
        };
        let e = bounded_propensity(rs.beta_a * severity);
        let intended = u_intent < e;
        let t_delay = -u_delay.ln() / rs.lambda;

        records.push(EventRecord::new(&id, 0.0, EventKind::Admission, ADMISSION_CODE, None));
        records.push(EventRecord::new(&id, 0.0, EventKind::Drug, INCLUSION_FLUID_CODE, None));
        for (j, code) in codes.iter().enumerate() {
            records.push(EventRecord::new(&id, 0.0, EventKind::Measurement, code, Some(proxies[j])));
        }
        // The delayed drug only materializes if the patient is still alive.
        if intended && t_delay < t_death {
            records.push(EventRecord::new(&id, t_delay, EventKind::Drug, TREATMENT_CODE, None));
        }
        records.push(EventRecord::new(&id, t_death, EventKind::Outcome, DEATH_CODE, None));

        let died = (t_death <= ITB_ORACLE_HORIZON_H) as u8 as f64;
        ids.push(id);
        y0s.push(died);
        y1s.push(died); // Null treatment: both potential outcomes coincide.
        es.push(e);
    }
    let store = EventStore::from_records(records)?;
    Ok((store, GroundTruth::from_parts(ids, y0s, y1s, es)))
}

/// Selection-bias scenario: the linear-confounding data-generating process,
/// except that the inclusion-defining billing code is recorded for every
/// treated patient but for controls only with probability increasing in
/// severity. The returned store holds only coded patients, while the ground
/// truth covers all generated patients.
pub fn gen_selection_bias(spec: &ScenarioSpec) -> Result<(EventStore, GroundTruth)> {
    let rs = spec.resolve()?;
    if rs.name != ScenarioKind::SelectionBias {
        return Err(Error::BadSpec("gen_selection_bias needs the selection_bias scenario".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rs.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let codes = covariate_codes(rs.d);
    let sqrt_d = (rs.d as f64).sqrt();

    let mut records = Vec::new();
    let mut ids = Vec::with_capacity(rs.n);
    let mut y0s = Vec::with_capacity(rs.n);
    let mut y1s = Vec::with_capacity(rs.n);
    let mut es = Vec::with_capacity(rs.n);

    for i in 0..rs.n {
        let id = patient_id(i, rs.n);
        // Draw order: covariates, treatment uniform, outcome noise, coding
        // uniform (drawn for everyone to keep the stream aligned).
        let x: Vec<f64> = (0..rs.d).map(|_| normal.sample(&mut rng)).collect();
        let u_treat: f64 = rng.gen();
        let eps: f64 = normal.sample(&mut rng);
        let u_code: f64 = rng.gen();

        let severity = x.iter().sum::<f64>() / sqrt_d;
        let e = bounded_propensity(rs.beta_a * severity);
        let a = u_treat < e;
        let lat0 = rs.beta_y * severity + rs.sigma * eps;
        let lat1 = lat0 + rs.tau[0];
        let y0 = (lat0 > 0.0) as u8 as f64;
        let y1 = (lat1 > 0.0) as u8 as f64;
        let y_obs = if a { y1 } else { y0 };

        // Treated patients are always coded; control coding tracks severity
        // with coupling gamma.
        let p_code = if a {
            1.0
        } else {
            (1.0 - rs.gamma) + rs.gamma * sigmoid(CODING_SEVERITY_SLOPE * severity)
        };
        let coded = u_code < p_code;

        if coded {
            records.push(EventRecord::new(&id, 0.0, EventKind::Admission, ADMISSION_CODE, None));
            records.push(EventRecord::new(&id, BILLING_T, EventKind::Procedure, BILLING_CODE, None));
            for (j, code) in codes.iter().enumerate() {
                let t = MEASUREMENT_T_LO + MEASUREMENT_T_SPAN * j as f64 / rs.d as f64;
                records.push(EventRecord::new(&id, t, EventKind::Measurement, code, Some(x[j])));
            }
            if a {
                records.push(EventRecord::new(&id, DRUG_T, EventKind::Drug, TREATMENT_CODE, None));
            }
            if y_obs > 0.5 {
                records.push(EventRecord::new(&id, OUTCOME_T, EventKind::Outcome, DEATH_CODE, None));
            }
        }

        ids.push(id);
        y0s.push(y0);
        y1s.push(y1);
        es.push(e);
    }
    let store = EventStore::from_records(records)?;
    Ok((store, GroundTruth::from_parts(ids, y0s, y1s, es)))
}
