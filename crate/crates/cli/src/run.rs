//! Command handlers: run one analysis and write its artifacts.
//!
//! Every handler ends by writing `report.json` (tool version, command, the
//! fully resolved configuration, and the artifact list) and `timings.json`
//! (wall-clock phase timings). The timings file is the only artifact that
//! varies between identically configured runs.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use emula_core::cohort::{write_cohort_csv, TrialProtocol};
use emula_core::dag::{CausalDag, DagSpec};
use emula_core::diagnostics;
use emula_core::estimators::{write_effects_csv, EstimandKind};
use emula_core::events::format_float;
use emula_core::hte::run_hte;
use emula_core::pipeline::{
    cross_fitted_propensity, estimate_effect_prepared, prepare, EstimatorId, NuisanceFamily,
};
use emula_core::svg::{
    bar_chart_svg, boxplot_svg, forest_plot_svg, overlap_histogram_svg, BoxStats, ForestRow,
};
use emula_core::synthgen;
use emula_core::util::mean;
use emula_core::{Error, Result};

use crate::config::{
    default_vibration_aggregations, resolve_pipeline, EstimateConfig, HteConfig, ItbConfig,
    ResolvedInput, ShortcutConfig, SimulateConfig, VibrateConfig, DEFAULT_ITB_WINDOWS_H,
};

/// Run-wide settings shared by every handler.
pub struct Ctx<'a> {
    pub out: &'a Path,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub allow_bad_adjustment: bool,
}

/// Wall-clock phase timings for `timings.json`.
struct Timer {
    start: Instant,
    last: Instant,
    phases: Vec<(String, f64)>,
}

impl Timer {
    fn new() -> Self {
        let now = Instant::now();
        Timer { start: now, last: now, phases: Vec::new() }
    }

    /// Closes the phase that started at the previous mark.
    fn mark(&mut self, name: &str) {
        let now = Instant::now();
        self.phases.push((name.to_string(), (now - self.last).as_secs_f64()));
        self.last = now;
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

/// Writes `report.json` and `timings.json`; every handler's final step.
fn finish(ctx: &Ctx, config: Value, outputs: &[&str], mut timer: Timer) -> Result<()> {
    let mut sorted: Vec<&str> = outputs.to_vec();
    sorted.sort_unstable();
    let report = json!({
        "tool": "emula",
        "version": env!("CARGO_PKG_VERSION"),
        "command": ctx.command,
        "config": config,
        "outputs": sorted,
    });
    write_json(&ctx.out.join("report.json"), &report)?;
    timer.mark("write");
    let phases: Vec<Value> =
        timer.phases.iter().map(|(n, s)| json!({ "phase": n, "seconds": s })).collect();
    let timings = json!({
        "command": ctx.command,
        "phases": phases,
        "total_seconds": (timer.last - timer.start).as_secs_f64(),
    });
    write_json(&ctx.out.join("timings.json"), &timings)
}

/// The input as it should be echoed in the report: the resolved scenario
/// (seed override applied) or the events path.
fn input_echo(input: &ResolvedInput) -> Value {
    if let Some(spec) = &input.scenario {
        json!({ "scenario": spec })
    } else {
        let path = input.events_path.as_ref().map(|p| p.display().to_string());
        json!({ "events": path })
    }
}

fn estimand_axis(estimand: EstimandKind) -> (&'static str, f64) {
    match estimand {
        EstimandKind::RiskDifference => ("risk difference", 0.0),
        EstimandKind::RiskRatio => ("risk ratio", 1.0),
    }
}

/// Screens the protocol's adjustment set against the causal graph. With no
/// graph the set is accepted unscreened; with violations the run aborts
/// unless `--allow-bad-adjustment` was given, in which case the violations
/// are returned so the report records what was knowingly adjusted for.
fn screen_adjustment(
    dag: Option<&DagSpec>,
    protocol: &TrialProtocol,
    allow: bool,
) -> Result<Vec<(String, String)>> {
    let Some(spec) = dag else {
        log::info!("no causal graph declared; the adjustment set is not screened");
        return Ok(Vec::new());
    };
    let graph = CausalDag::from_spec(spec)?;
    let violations = graph.validate_adjustment_set(&protocol.confounder_codes)?;
    if violations.is_empty() {
        return Ok(Vec::new());
    }
    let detail = violations
        .iter()
        .map(|(node, role)| format!("{node} ({role})"))
        .collect::<Vec<_>>()
        .join(", ");
    if allow {
        log::warn!("adjusting for {detail}; continuing because --allow-bad-adjustment is set");
        Ok(violations.into_iter().map(|(n, r)| (n, r.to_string())).collect())
    } else {
        Err(Error::AdjustmentRejected {
            detail: format!("{detail}; drop these codes or rerun with --allow-bad-adjustment"),
        })
    }
}

pub fn simulate(cfg: SimulateConfig, ctx: &Ctx) -> Result<()> {
    let mut timer = Timer::new();
    let mut spec = cfg.scenario;
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    let (store, truth) = synthgen::generate(&spec)?;
    timer.mark("generate");

    store.write_csv(ctx.out.join("events.csv"))?;
    truth.write_csv(ctx.out.join("ground_truth.csv"))?;
    let oracle = json!({
        "ate_oracle": truth.ate_oracle,
        "mean_e_true": mean(&truth.e_true),
        "n_patients": truth.patient_ids.len(),
        "n_events": store.n_events(),
    });
    write_json(&ctx.out.join("oracle.json"), &oracle)?;

    let outputs = ["events.csv", "ground_truth.csv", "oracle.json"];
    finish(ctx, json!({ "scenario": spec }), &outputs, timer)
}

pub fn estimate(cfg: EstimateConfig, ctx: &Ctx) -> Result<()> {
    let mut timer = Timer::new();
    let protocol = cfg.input.resolve_protocol(&cfg.protocol)?;
    protocol.validate()?;
    let mut pipeline = cfg.pipeline;
    if let Some(s) = ctx.seed {
        pipeline.seed = s;
    }
    pipeline.validate()?;
    let input = cfg.input.resolve(ctx.seed)?;
    timer.mark("input");

    let dag = cfg.input.resolve_dag(&cfg.dag);
    let violations = screen_adjustment(dag.as_ref(), &protocol, ctx.allow_bad_adjustment)?;

    let prep = prepare(&input.store, &protocol, pipeline.aggregation, pipeline.window_rule)?;
    let estimate = estimate_effect_prepared(&prep, &protocol, &pipeline)?;
    timer.mark("estimate");

    write_json(&ctx.out.join("flowchart.json"), &prep.flowchart)?;
    write_cohort_csv(&prep.rows, ctx.out.join("cohort.csv"))?;
    write_effects_csv(&ctx.out.join("effects.csv"), std::slice::from_ref(&estimate))?;
    write_json(&ctx.out.join("effects.json"), &estimate)?;
    let mut outputs = vec!["cohort.csv", "effects.csv", "effects.json", "flowchart.json"];

    if pipeline.estimator.needs_propensity() {
        let e_hat = cross_fitted_propensity(&prep, &pipeline)?;
        let overlap = diagnostics::overlap_report(&e_hat, &prep.a)?;
        overlap.write_csv(ctx.out.join("overlap.csv"))?;
        std::fs::write(ctx.out.join("overlap.svg"), overlap_histogram_svg(&overlap))?;
        let balance = diagnostics::balance_report(&prep.dm, &prep.a, &e_hat)?;
        balance.write_csv(ctx.out.join("balance.csv"))?;
        outputs.extend(["balance.csv", "overlap.csv", "overlap.svg"]);
    }

    let violations_echo: Vec<Value> =
        violations.iter().map(|(n, r)| json!({ "node": n, "role": r })).collect();
    let config_echo = json!({
        "input": input_echo(&input),
        "protocol": protocol,
        "pipeline": pipeline,
        "dag": dag,
        "adjustment_violations": violations_echo,
    });
    finish(ctx, config_echo, &outputs, timer)
}

pub fn vibrate(cfg: VibrateConfig, ctx: &Ctx) -> Result<()> {
    let mut timer = Timer::new();
    let protocol = cfg.input.resolve_protocol(&cfg.protocol)?;
    protocol.validate()?;
    let base = resolve_pipeline(&cfg.pipeline, EstimatorId::Aipw, ctx.seed);
    let aggregations = cfg.aggregations.unwrap_or_else(default_vibration_aggregations);
    let estimators = cfg.estimators.unwrap_or_else(|| EstimatorId::ALL.to_vec());
    let nuisances = cfg.nuisances.unwrap_or_else(|| NuisanceFamily::ALL.to_vec());
    let input = cfg.input.resolve(ctx.seed)?;
    timer.mark("input");

    let grid = diagnostics::run_vibration(
        &input.store,
        &protocol,
        &base,
        &aggregations,
        &estimators,
        &nuisances,
    )?;
    timer.mark("vibration");

    grid.write_csv(ctx.out.join("vibration.csv"))?;
    write_json(&ctx.out.join("vibration.json"), &grid)?;
    let rows: Vec<ForestRow> = grid
        .cells
        .iter()
        .map(|c| ForestRow {
            label: format!(
                "{}/{}/{}",
                c.aggregation.as_str(),
                c.estimator.as_str(),
                c.nuisance.as_str()
            ),
            point: c.estimate.as_ref().map(|e| e.point),
            ci: c.estimate.as_ref().and_then(|e| e.ci_low.zip(e.ci_high)),
        })
        .collect();
    let (x_label, reference) = estimand_axis(grid.estimand);
    let figure = forest_plot_svg("Vibration of the effect estimate", &rows, x_label, Some(reference));
    std::fs::write(ctx.out.join("forest.svg"), figure)?;

    let config_echo = json!({
        "input": input_echo(&input),
        "protocol": protocol,
        "pipeline": base,
        "aggregations": aggregations,
        "estimators": estimators,
        "nuisances": nuisances,
    });
    let outputs = ["forest.svg", "vibration.csv", "vibration.json"];
    finish(ctx, config_echo, &outputs, timer)
}

pub fn itb_sweep(cfg: ItbConfig, ctx: &Ctx) -> Result<()> {
    let mut timer = Timer::new();
    let protocol = cfg.input.resolve_protocol(&cfg.protocol)?;
    protocol.validate()?;
    let pipeline = resolve_pipeline(&cfg.pipeline, EstimatorId::Aipw, ctx.seed);
    let windows = cfg.windows_h.unwrap_or_else(|| DEFAULT_ITB_WINDOWS_H.to_vec());
    let input = cfg.input.resolve(ctx.seed)?;
    timer.mark("input");

    let report = diagnostics::run_itb_sweep(&input.store, &protocol, &windows, &pipeline)?;
    timer.mark("sweep");

    report.write_csv(ctx.out.join("itb.csv"), &pipeline)?;
    write_json(&ctx.out.join("itb.json"), &report)?;
    let rows: Vec<ForestRow> = report
        .windows
        .iter()
        .map(|w| ForestRow {
            label: format!("window {} h", format_float(w.window_h)),
            point: w.estimate.as_ref().map(|e| e.point),
            ci: w.estimate.as_ref().and_then(|e| e.ci_low.zip(e.ci_high)),
        })
        .collect();
    let (x_label, reference) = estimand_axis(pipeline.estimand);
    let figure =
        forest_plot_svg("Effect estimate by eligibility window", &rows, x_label, Some(reference));
    std::fs::write(ctx.out.join("itb.svg"), figure)?;

    let config_echo = json!({
        "input": input_echo(&input),
        "protocol": protocol,
        "pipeline": pipeline,
        "windows_h": windows,
    });
    let outputs = ["itb.csv", "itb.json", "itb.svg"];
    finish(ctx, config_echo, &outputs, timer)
}

pub fn hte(cfg: HteConfig, ctx: &Ctx) -> Result<()> {
    let mut timer = Timer::new();
    let protocol = cfg.input.resolve_protocol(&cfg.protocol)?;
    let pipeline = resolve_pipeline(&cfg.pipeline, EstimatorId::Dml, ctx.seed);
    let input = cfg.input.resolve(ctx.seed)?;
    timer.mark("input");

    let report = run_hte(&input.store, &protocol, &pipeline)?;
    timer.mark("hte");

    write_json(&ctx.out.join("hte.json"), &report)?;
    report.subgroups.write_csv(ctx.out.join("subgroups.csv"))?;
    report.write_cate_csv(ctx.out.join("cate.csv"))?;
    let boxes: Vec<BoxStats> = report
        .subgroups
        .rows
        .iter()
        .map(|r| BoxStats {
            label: format!("{} {}", r.group, if r.stratum { "high" } else { "low" }),
            lo_whisker: r.lo_whisker,
            q25: r.q25,
            median: r.median,
            q75: r.q75,
            hi_whisker: r.hi_whisker,
        })
        .collect();
    let figure =
        boxplot_svg("Conditional treatment effects by subgroup", "estimated CATE", &boxes);
    std::fs::write(ctx.out.join("subgroups.svg"), figure)?;

    let config_echo = json!({
        "input": input_echo(&input),
        "protocol": protocol,
        "pipeline": pipeline,
    });
    let outputs = ["cate.csv", "hte.json", "subgroups.csv", "subgroups.svg"];
    finish(ctx, config_echo, &outputs, timer)
}

pub fn shortcut_demo(cfg: ShortcutConfig, ctx: &Ctx) -> Result<()> {
    let mut timer = Timer::new();
    let protocol = cfg.input.resolve_protocol(&cfg.protocol)?;
    protocol.validate()?;
    let demo_seed = ctx.seed.unwrap_or(cfg.seed);
    let input = cfg.input.resolve(ctx.seed)?;
    timer.mark("input");

    let report = diagnostics::shortcut_demo(&input.store, &protocol, demo_seed)?;
    timer.mark("demo");

    write_json(&ctx.out.join("shortcut.json"), &report)?;
    let bars = vec![
        ("all-stay @ all-stay".to_string(), report.auc_trained_all_stay_eval_all_stay),
        ("all-stay @ pre-treat".to_string(), report.auc_trained_all_stay_eval_pretreatment),
        ("pre-treat @ pre-treat".to_string(), report.auc_trained_pretreatment_eval_pretreatment),
        ("pre-treat @ all-stay".to_string(), report.auc_trained_pretreatment_eval_all_stay),
    ];
    let figure = bar_chart_svg("Outcome-model AUC (trained @ evaluated)", &bars);
    std::fs::write(ctx.out.join("shortcut.svg"), figure)?;

    let config_echo = json!({
        "input": input_echo(&input),
        "protocol": protocol,
        "seed": demo_seed,
    });
    let outputs = ["shortcut.json", "shortcut.svg"];
    finish(ctx, config_echo, &outputs, timer)
}
