//! Acceptance suite: every headline guarantee of the toolkit, checked
//! end-to-end against synthetic ground truth or closed-form oracles. Each
//! test prints one `criterion N (...): PASS - ...` line on success; the
//! assert messages carry the same numbers so a failure is self-describing.
//!
//! Criteria 9 (the CLI adjustment gate) and 10 (byte-identical re-runs) live
//! in the CLI crate's acceptance suite, next to the binary they exercise.

use std::time::Instant;

use emula_core::cohort::CohortRow;
use emula_core::diagnostics::{ntv, run_itb_sweep, shortcut_demo};
use emula_core::estimators::{
    ate_aipw, ate_dml, ate_gformula, ate_ipw, EstimandKind, DEFAULT_CLIP,
};
use emula_core::features::{aggregate_codes, apply_imputer_plain, fit_imputer, WindowRule};
use emula_core::hte::{fit_cate_dml, predict_cate, CATE_RIDGE_ALPHA};
use emula_core::matrix::Matrix;
use emula_core::nuisance::{cross_fit_predict, cross_fit_t_learner, CrossFitPlan, ModelSpec};
use emula_core::pipeline::{
    estimate_effect, point_for_rows, prepare, resolve_nuisances, EstimatorId, HyperSpec,
    PipelineConfig,
};
use emula_core::synthgen::{
    self, default_protocol, patient_index, GroundTruth, ScenarioKind, ScenarioSpec, TauSpec,
    TREATMENT_CODE,
};

/// Ground-truth values re-indexed to cohort rows via the generated ids.
fn aligned(values: &[f64], rows: &[CohortRow]) -> Vec<f64> {
    rows.iter()
        .map(|r| values[patient_index(&r.patient_id).expect("generated id")])
        .collect()
}

/// The observed *continuous* outcome per cohort row. Continuous scenarios
/// never emit outcome events, so the latent outcomes only exist in the
/// ground truth; this re-observes them under the realized assignment.
fn observed_continuous(rows: &[CohortRow], gt: &GroundTruth) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            let i = patient_index(&r.patient_id).expect("generated id");
            if r.a == 1 {
                gt.y1[i]
            } else {
                gt.y0[i]
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: oracle consistency of all four main estimators.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_estimators_recover_the_linear_confounding_oracle() {
    // Continuous endpoint with constant effect: the oracle ATE is exactly
    // tau = 2.0 and confounding is linear, so every estimator with a linear
    // nuisance family is correctly specified.
    let spec =
        ScenarioSpec::new(ScenarioKind::LinearConfounding, 10_000, 10, 41, TauSpec::Scalar(2.0));
    let (store, gt) = synthgen::generate(&spec).unwrap();
    assert!(
        (gt.ate_oracle - 2.0).abs() < 1e-12,
        "constant-effect oracle should be tau exactly, got {}",
        gt.ate_oracle
    );

    let protocol = default_protocol(spec.name, spec.d);
    let prep = prepare(
        &store,
        &protocol,
        emula_core::features::AggregationSpec::Last,
        WindowRule::PreTreatment,
    )
    .unwrap();
    assert_eq!(prep.rows.len(), spec.n, "no patient should be dropped");
    let y = observed_continuous(&prep.rows, &gt);
    let idx: Vec<usize> = (0..prep.rows.len()).collect();

    let mut details = Vec::new();
    for estimator in [EstimatorId::Ipw, EstimatorId::GFormula, EstimatorId::Aipw, EstimatorId::Dml]
    {
        let mut config = PipelineConfig::new(estimator);
        config.hyper = HyperSpec::Default { n_trees: 100, max_depth: 10 };
        config.n_boot = 0;
        config.seed = 7;
        let started = Instant::now();
        let pair = resolve_nuisances(&prep.dm, &prep.a, &y, &config).unwrap();
        let point = point_for_rows(&prep.dm, &prep.a, &y, &pair, &config, &idx).unwrap();
        let seconds = started.elapsed().as_secs_f64();
        let err = (point - gt.ate_oracle).abs();
        assert!(
            err < 0.1,
            "{estimator:?}: |{point:.4} - {:.4}| = {err:.4} >= 0.1",
            gt.ate_oracle
        );
        assert!(seconds < 120.0, "{estimator:?} took {seconds:.1}s >= 120s");
        details.push(format!("{estimator:?} {point:.4} ({seconds:.2}s)"));
    }
    println!(
        "criterion 1 (oracle consistency): PASS - n=10000, oracle 2.0, |err| < 0.1 for {}",
        details.join(", ")
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: double robustness of AIPW under single misspecification.
// ---------------------------------------------------------------------------

/// The nonlinear confounding score used by the generator, restated
/// independently: adjacent pairwise products plus centered squares,
/// standardized to roughly unit variance.
fn nonlinear_score(x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for j in 0..d - 1 {
        s += x[j] * x[j + 1];
    }
    for v in x {
        s += (v * v - 1.0) / std::f64::consts::SQRT_2;
    }
    s / ((2 * d - 1) as f64).sqrt()
}

#[test]
fn criterion_2_aipw_is_doubly_robust_under_single_misspecification() {
    // Nonlinear scenario, continuous endpoint, tau = 1.0: both nuisances
    // depend on psi(x), which is orthogonal to every linear function of x,
    // so a linear model for either nuisance is not just noisy but
    // structurally wrong. Thresholds (|bias| < 0.1 for the doubly robust
    // estimator, > 0.2 for the misspecified plug-in) and the sample size
    // were fixed ahead of time from a 15-seed pilot: at n = 30,000 the
    // doubly robust biases spread with sd ~ 0.05 around zero while the
    // plug-in bias sits near 1.8 on every seed.
    let n = 30_000;
    let d = 10;
    let tau = 1.0;
    let beta_y = 2.0; // the scenario's resolved outcome-confounding default
    let spec =
        ScenarioSpec::new(ScenarioKind::NonlinearConfounding, n, d, 27, TauSpec::Scalar(tau));
    let (store, gt) = synthgen::generate(&spec).unwrap();
    let protocol = default_protocol(spec.name, spec.d);
    let prep = prepare(
        &store,
        &protocol,
        emula_core::features::AggregationSpec::Last,
        WindowRule::PreTreatment,
    )
    .unwrap();
    assert_eq!(prep.dm.cols(), d, "expected one aggregated column per covariate");
    let y = observed_continuous(&prep.rows, &gt);
    let plan = CrossFitPlan::new(prep.rows.len(), 5, 17).unwrap();

    // Case A: outcome model misspecified (linear ridge on raw x), propensity
    // correct (the generator's true e(x)).
    let e_true = aligned(&gt.e_true, &prep.rows);
    let ridge = ModelSpec::RidgeRegression { alpha: 1.0 };
    let (mu1_mis, mu0_mis) = cross_fit_t_learner(&ridge, &prep.dm, &y, &prep.a, &plan).unwrap();
    let (_, gf_mis) = ate_gformula(&mu1_mis, &mu0_mis, EstimandKind::RiskDifference).unwrap();
    let (_, aipw_a) = ate_aipw(
        &mu1_mis,
        &mu0_mis,
        &e_true,
        &prep.a,
        &y,
        DEFAULT_CLIP,
        EstimandKind::RiskDifference,
    )
    .unwrap();
    let gf_bias = (gf_mis - gt.ate_oracle).abs();
    let aipw_a_bias = (aipw_a - gt.ate_oracle).abs();
    assert!(
        gf_bias > 0.2,
        "misspecified g-formula should stay biased: |{gf_mis:.4} - {:.4}| = {gf_bias:.4} <= 0.2",
        gt.ate_oracle
    );
    assert!(
        aipw_a_bias < 0.1,
        "AIPW with a correct propensity should recover: bias {aipw_a_bias:.4} >= 0.1"
    );

    // Case B (symmetric): outcome model correct (mu0 = beta_y * psi(x),
    // mu1 = mu0 + tau, restated from the generating equations), propensity
    // misspecified (cross-fitted linear logistic on raw x, which collapses
    // to a near-constant fit because tanh(psi) is orthogonal to linear x).
    let x_rows: Vec<Vec<f64>> = (0..prep.dm.rows())
        .map(|r| (0..d).map(|c| prep.dm.values.get(r, c)).collect())
        .collect();
    let mu0_true: Vec<f64> = x_rows.iter().map(|x| beta_y * nonlinear_score(x)).collect();
    let mu1_true: Vec<f64> = mu0_true.iter().map(|m| m + tau).collect();
    let logistic = ModelSpec::LogisticL2 { c: 1.0 };
    let e_mis = cross_fit_predict(&logistic, &prep.dm, &prep.a, &plan).unwrap();
    let (_, aipw_b) = ate_aipw(
        &mu1_true,
        &mu0_true,
        &e_mis,
        &prep.a,
        &y,
        DEFAULT_CLIP,
        EstimandKind::RiskDifference,
    )
    .unwrap();
    let (_, ipw_mis) =
        ate_ipw(&e_mis, &prep.a, &y, DEFAULT_CLIP, EstimandKind::RiskDifference).unwrap();
    let aipw_b_bias = (aipw_b - gt.ate_oracle).abs();
    let ipw_bias = (ipw_mis - gt.ate_oracle).abs();
    assert!(
        ipw_bias > 0.2,
        "misspecified IPW should stay biased: |{ipw_mis:.4} - {:.4}| = {ipw_bias:.4} <= 0.2",
        gt.ate_oracle
    );
    assert!(
        aipw_b_bias < 0.1,
        "AIPW with a correct outcome model should recover: bias {aipw_b_bias:.4} >= 0.1"
    );

    println!(
        "criterion 2 (double robustness): PASS - oracle {:.4}; wrong outcome model: \
         g-formula bias {gf_bias:.3} > 0.2, AIPW bias {aipw_a_bias:.3} < 0.1; \
         wrong propensity: IPW bias {ipw_bias:.3} > 0.2, AIPW bias {aipw_b_bias:.3} < 0.1",
        gt.ate_oracle
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: immortal-time bias grows with the eligibility window.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_wider_eligibility_windows_manufacture_immortal_time_bias() {
    // The treatment is null (tau = 0) but is dispensed after an exponential
    // delay, so widening the eligibility window asks treated patients to
    // survive ever longer before entering the cohort. The spurious benefit
    // must grow monotonically across 24 -> 48 -> 72 h in at least 18 of 20
    // seeds.
    let windows = [24.0, 48.0, 72.0];
    let n_seeds = 20;
    let mut monotone = 0;
    let mut lines = Vec::new();
    for seed in 0..n_seeds {
        let spec =
            ScenarioSpec::new(ScenarioKind::ImmortalTime, 5_000, 3, seed, TauSpec::Scalar(0.0));
        let (store, _gt) = synthgen::generate(&spec).unwrap();
        let protocol = default_protocol(spec.name, spec.d);
        let mut config = PipelineConfig::new(EstimatorId::Aipw);
        config.hyper = HyperSpec::Fixed {
            propensity: ModelSpec::LogisticL2 { c: 1.0 },
            outcome: ModelSpec::LogisticL2 { c: 1.0 },
        };
        config.n_boot = 0;
        config.seed = 1000 + seed;
        let report = run_itb_sweep(&store, &protocol, &windows, &config).unwrap();
        let points: Vec<f64> = report
            .windows
            .iter()
            .map(|w| {
                assert!(w.error.is_none(), "seed {seed}: window {} failed: {:?}", w.window_h, w.error);
                w.estimate.as_ref().unwrap().point
            })
            .collect();
        // More treatment-favorable = a lower (more negative) risk difference.
        if points[0] > points[1] && points[1] > points[2] {
            monotone += 1;
        }
        lines.push(format!(
            "seed {seed}: {:.4} / {:.4} / {:.4}",
            points[0], points[1], points[2]
        ));
    }
    assert!(
        monotone >= 18,
        "monotone spurious-benefit trend in only {monotone}/20 seeds:\n{}",
        lines.join("\n")
    );
    println!(
        "criterion 3 (immortal-time bias): PASS - effect grows more treatment-favorable \
         across 24/48/72 h windows in {monotone}/20 seeds (null treatment, n=5000)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: percentile bootstrap coverage of the oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_bootstrap_intervals_cover_the_oracle() {
    // AIPW with B = 50 percentile bootstrap on the binary-endpoint linear
    // scenario: the nominal-95% interval must cover the per-seed oracle in
    // at least 17 of 20 seeds, and the whole sweep must stay far under the
    // one-hour budget.
    let started = Instant::now();
    let n_seeds = 20;
    let mut covered = 0;
    let mut lines = Vec::new();
    for seed in 0..n_seeds {
        let mut spec =
            ScenarioSpec::new(ScenarioKind::LinearConfounding, 5_000, 5, seed, TauSpec::Scalar(1.0));
        spec.binary_outcome = true;
        let (store, gt) = synthgen::generate(&spec).unwrap();
        let protocol = default_protocol(spec.name, spec.d);
        let mut config = PipelineConfig::new(EstimatorId::Aipw);
        config.hyper = HyperSpec::Fixed {
            propensity: ModelSpec::LogisticL2 { c: 1.0 },
            outcome: ModelSpec::LogisticL2 { c: 1.0 },
        };
        config.n_boot = 50;
        config.alpha = 0.05;
        config.seed = 2000 + seed;
        let est = estimate_effect(&store, &protocol, &config).unwrap();
        let (lo, hi) = (est.ci_low.unwrap(), est.ci_high.unwrap());
        let inside = lo <= gt.ate_oracle && gt.ate_oracle <= hi;
        if inside {
            covered += 1;
        }
        lines.push(format!(
            "seed {seed}: oracle {:.4} in [{lo:.4}, {hi:.4}] = {inside}",
            gt.ate_oracle
        ));
    }
    let seconds = started.elapsed().as_secs_f64();
    assert!(
        covered >= 17,
        "95% interval covered the oracle in only {covered}/20 seeds:\n{}",
        lines.join("\n")
    );
    assert!(seconds < 3600.0, "coverage sweep took {seconds:.0}s >= 1h");
    println!(
        "criterion 4 (bootstrap coverage): PASS - nominal-95% percentile interval (B=50) \
         covered the oracle in {covered}/20 seeds at n=5000 in {seconds:.0}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: algebraic identities between estimators, to 1e-12.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_algebraic_identities_hold_to_machine_precision() {
    let tol = 1e-12;
    let a = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let e = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.35, 0.45, 0.55, 0.65];
    let y = [1.3, -0.7, 0.2, 2.4, -1.1, 0.6, 1.9, -0.3, 0.8, 0.1];
    let mu1 = [0.9, 0.3, -0.2, 1.1, 0.6, -0.4, 0.2, 0.8, -0.1, 0.5];
    let mu0 = [0.1, -0.5, 0.7, 0.2, -0.3, 0.4, -0.6, 0.0, 0.3, -0.2];
    let rd = EstimandKind::RiskDifference;

    // (a) Zero outcome residuals: the AIPW correction terms vanish row by
    // row, so AIPW equals the g-formula.
    let y_fitted: Vec<f64> = a
        .iter()
        .zip(mu1.iter().zip(&mu0))
        .map(|(&ai, (&m1, &m0))| if ai == 1.0 { m1 } else { m0 })
        .collect();
    let (_, gf) = ate_gformula(&mu1, &mu0, rd).unwrap();
    let (_, aipw_gf) = ate_aipw(&mu1, &mu0, &e, &a, &y_fitted, DEFAULT_CLIP, rd).unwrap();
    let d_a = (aipw_gf - gf).abs();
    assert!(d_a < tol, "AIPW vs g-formula under zero residuals: |diff| = {d_a:.2e}");

    // (b) Identically-zero outcome models: AIPW degenerates to the
    // Horvitz-Thompson IPW estimator.
    let zeros = [0.0; 10];
    let (_, ipw) = ate_ipw(&e, &a, &y, DEFAULT_CLIP, rd).unwrap();
    let (_, aipw_ipw) = ate_aipw(&zeros, &zeros, &e, &a, &y, DEFAULT_CLIP, rd).unwrap();
    let d_b = (aipw_ipw - ipw).abs();
    assert!(d_b < tol, "AIPW vs IPW under zero outcome models: |diff| = {d_b:.2e}");

    // (c) Constant propensity equal to the treated fraction: IPW reduces to
    // the difference in arm means (the clip is non-binding at 0.5).
    let e_const = [0.5; 10];
    let (_, ipw_const) = ate_ipw(&e_const, &a, &y, DEFAULT_CLIP, rd).unwrap();
    let mean1 = mean(&y.iter().zip(&a).filter(|(_, &ai)| ai == 1.0).map(|(&v, _)| v).collect::<Vec<_>>());
    let mean0 = mean(&y.iter().zip(&a).filter(|(_, &ai)| ai == 0.0).map(|(&v, _)| v).collect::<Vec<_>>());
    let d_c = (ipw_const - (mean1 - mean0)).abs();
    assert!(d_c < tol, "IPW vs difference in means at constant e: |diff| = {d_c:.2e}");

    // (d) The CATE stage with zero effect-modifier columns is the scalar
    // partially-linear DML estimator on the same residuals (the clip enters
    // through the clamped treatment residual).
    let m = [0.4, -0.2, 0.5, 1.0, -0.6, 0.3, 0.9, -0.1, 0.2, 0.0];
    let e_wide = [0.004, 0.3, 0.4, 0.5, 0.6, 0.7, 0.997, 0.45, 0.55, 0.65];
    let clip = 0.05;
    let dml = ate_dml(&m, &e_wide, &a, &y, clip).unwrap();
    let y_tilde: Vec<f64> = y.iter().zip(&m).map(|(yi, mi)| yi - mi).collect();
    let a_tilde: Vec<f64> =
        a.iter().zip(&e_wide).map(|(ai, ei)| ai - ei.clamp(clip, 1.0 - clip)).collect();
    let cate = fit_cate_dml(&y_tilde, &a_tilde, &Matrix::zeros(10, 0), CATE_RIDGE_ALPHA).unwrap();
    let d_d = (cate.intercept - dml).abs();
    assert!(d_d < tol, "intercept-only CATE vs scalar DML: |diff| = {d_d:.2e}");

    println!(
        "criterion 5 (algebraic identities): PASS - AIPW=g-formula {d_a:.1e}, AIPW=IPW {d_b:.1e}, \
         IPW=diff-in-means {d_c:.1e}, CATE-intercept=DML {d_d:.1e}, all < 1e-12"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: the overlap diagnostic hits its analytic anchors.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_ntv_hits_its_analytic_anchors() {
    // Perfect overlap: a propensity constant at the treated fraction
    // carries no information about the arms, so the normalized total
    // variation must vanish.
    let a_mixed: Vec<f64> = (0..500).map(|i| (i < 150) as u8 as f64).collect();
    let e_const = vec![0.3; 500];
    let v_const = ntv(&e_const, &a_mixed).unwrap();
    assert!(v_const < 1e-12, "constant propensity gave NTV {v_const:.2e}");

    // Near-separation: e in {0.999, 0.001} aligned with the arms gives
    // per-row contributions |2e - 1| / (2 * 0.5) = 0.998, hence NTV 0.998.
    let mut e_sep = vec![0.999; 250];
    e_sep.extend(vec![0.001; 250]);
    let mut a_sep = vec![1.0; 250];
    a_sep.extend(vec![0.0; 250]);
    let v_sep = ntv(&e_sep, &a_sep).unwrap();
    assert!(v_sep > 0.99, "near-separating propensities gave NTV {v_sep:.4} <= 0.99");

    // Quadrature oracle: under the linear scenario's defaults the treatment
    // score is s ~ N(0,1) and e = 0.02 + 0.96*sigmoid(s), so p = 1/2 and
    //   NTV = E|2e - 1| = 0.96 * E|tanh(s/2)|,
    // a one-dimensional integral evaluated by Simpson's rule.
    let phi = |s: f64| (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let expected = 0.96 * 2.0 * simpson(|s| (s / 2.0).tanh() * phi(s), 0.0, 10.0, 4000);
    let spec =
        ScenarioSpec::new(ScenarioKind::LinearConfounding, 4_000, 5, 31, TauSpec::Scalar(1.0));
    let (store, gt) = synthgen::generate(&spec).unwrap();
    let a: Vec<f64> = gt
        .patient_ids
        .iter()
        .map(|id| {
            store.events(id).unwrap().iter().any(|ev| ev.code == TREATMENT_CODE) as u8 as f64
        })
        .collect();
    let v_quad = ntv(&gt.e_true, &a).unwrap();
    let d_quad = (v_quad - expected).abs();
    assert!(
        d_quad < 0.02,
        "empirical NTV {v_quad:.4} vs quadrature oracle {expected:.4}, |diff| = {d_quad:.4}"
    );

    println!(
        "criterion 6 (overlap anchors): PASS - constant e: {v_const:.1e} < 1e-12, \
         near-separation: {v_sep:.4} > 0.99, quadrature oracle {expected:.4} matched \
         within {d_quad:.4} (< 0.02)"
    );
}

/// Simpson integration of `g` over `[lo, hi]`.
fn simpson(g: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
    let n = steps + steps % 2;
    let h = (hi - lo) / n as f64;
    let mut s = g(lo) + g(hi);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * g(lo + h * k as f64);
    }
    s * h / 3.0
}

// ---------------------------------------------------------------------------
// Criterion 7: outcome classifiers ride post-treatment shortcuts.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_shortcut_classifiers_collapse_under_pretreatment_evaluation() {
    // The whole-stay model leans on the two post-treatment markers, so
    // masking them at evaluation time must cost at least 0.05 AUC (median
    // over seeds). The control model never saw the markers during training:
    // a forest grown on features that are constant in its training data
    // cannot split on them, so its predictions are unchanged row-for-row
    // when those features reappear — the control delta is structurally zero,
    // and the 0.02 ceiling just pins that down with slack for AUC ties.
    let n_seeds = 10;
    let mut delta_trained_all = Vec::new();
    let mut delta_trained_pre = Vec::new();
    for seed in 0..n_seeds {
        let spec = ScenarioSpec::new(ScenarioKind::Shortcut, 2_000, 3, seed, TauSpec::Scalar(0.5));
        let (store, _gt) = synthgen::generate(&spec).unwrap();
        let protocol = default_protocol(spec.name, spec.d);
        let report = shortcut_demo(&store, &protocol, 500 + seed).unwrap();
        delta_trained_all.push(
            report.auc_trained_all_stay_eval_all_stay
                - report.auc_trained_all_stay_eval_pretreatment,
        );
        delta_trained_pre.push(
            report.auc_trained_pretreatment_eval_all_stay
                - report.auc_trained_pretreatment_eval_pretreatment,
        );
    }
    let med_all = median(&delta_trained_all);
    let med_pre = median(&delta_trained_pre);
    assert!(
        med_all >= 0.05,
        "median AUC drop of the all-stay model is {med_all:.4} < 0.05: {delta_trained_all:?}"
    );
    assert!(
        med_pre.abs() <= 0.02,
        "median AUC shift of the pre-treatment model is {med_pre:.4}, |.| > 0.02: {delta_trained_pre:?}"
    );
    println!(
        "criterion 7 (shortcut collapse): PASS - median AUC drop {med_all:.3} >= 0.05 for the \
         all-stay model; {med_pre:.3} (|.| <= 0.02) for the pre-treatment control over {n_seeds} seeds"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: the CATE stage recovers linear heterogeneity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_cate_recovers_the_heterogeneous_slope() {
    // tau(x) = 1 + 2*x0 on the continuous endpoint. With a correct
    // propensity the R-learner projection identifies the slope even though
    // the ridge outcome model is only an approximation; the fitted
    // coefficient must land in [1.6, 2.4] in >= 17/20 seeds and the
    // median predicted effect must order the x0 subgroups correctly in
    // >= 19/20.
    let n_seeds = 20;
    let mut coef_ok = 0;
    let mut order_ok = 0;
    let mut lines = Vec::new();
    for seed in 0..n_seeds {
        let spec = ScenarioSpec::new(
            ScenarioKind::HeterogeneousLinear,
            10_000,
            5,
            seed,
            TauSpec::Vector(vec![1.0, 2.0]),
        );
        let (store, gt) = synthgen::generate(&spec).unwrap();
        let protocol = default_protocol(spec.name, spec.d);
        let prep = prepare(
            &store,
            &protocol,
            emula_core::features::AggregationSpec::Last,
            WindowRule::PreTreatment,
        )
        .unwrap();
        let y = observed_continuous(&prep.rows, &gt);
        let plan = CrossFitPlan::new(prep.rows.len(), 5, 3000 + seed).unwrap();

        let e_hat = cross_fit_predict(
            &ModelSpec::LogisticL2 { c: 1.0 },
            &prep.dm,
            &prep.a,
            &plan,
        )
        .unwrap();
        let m_hat = cross_fit_predict(
            &ModelSpec::RidgeRegression { alpha: 1.0 },
            &prep.dm,
            &y,
            &plan,
        )
        .unwrap();
        let a_tilde: Vec<f64> = prep
            .a
            .iter()
            .zip(&e_hat)
            .map(|(ai, ei)| ai - ei.clamp(DEFAULT_CLIP, 1.0 - DEFAULT_CLIP))
            .collect();
        let y_tilde: Vec<f64> = y.iter().zip(&m_hat).map(|(yi, mi)| yi - mi).collect();

        let raw = aggregate_codes(
            &store,
            &prep.rows,
            &protocol,
            &protocol.cate_codes,
            emula_core::features::AggregationSpec::Last,
            WindowRule::PreTreatment,
            true,
        )
        .unwrap();
        let all_rows: Vec<usize> = (0..raw.rows()).collect();
        let imp = fit_imputer(&raw, &all_rows).unwrap();
        let x_cate = apply_imputer_plain(&imp, &raw, &all_rows).unwrap().values;

        let model = fit_cate_dml(&y_tilde, &a_tilde, &x_cate, CATE_RIDGE_ALPHA).unwrap();
        let slope = model.coefficients[0];
        if (1.6..=2.4).contains(&slope) {
            coef_ok += 1;
        }

        let tau_hat = predict_cate(&model, &x_cate).unwrap();
        let x0: Vec<f64> = (0..x_cate.rows()).map(|r| x_cate.get(r, 0)).collect();
        let split = median(&x0);
        let hi: Vec<f64> =
            tau_hat.iter().zip(&x0).filter(|(_, &v)| v > split).map(|(&t, _)| t).collect();
        let lo: Vec<f64> =
            tau_hat.iter().zip(&x0).filter(|(_, &v)| v <= split).map(|(&t, _)| t).collect();
        if median(&hi) > median(&lo) {
            order_ok += 1;
        }
        lines.push(format!("seed {seed}: slope {slope:.3}"));
    }
    assert!(
        coef_ok >= 17,
        "slope in [1.6, 2.4] in only {coef_ok}/20 seeds:\n{}",
        lines.join("\n")
    );
    assert!(order_ok >= 19, "subgroup medians ordered in only {order_ok}/20 seeds");
    println!(
        "criterion 8 (heterogeneity): PASS - ridge slope on x0 in [1.6, 2.4] in {coef_ok}/20 \
         seeds, subgroup medians ordered in {order_ok}/20 (true tau(x) = 1 + 2*x0)"
    );
}
