//! Emulated-trial cohort construction.
//!
//! A [`TrialProtocol`] pins down the design before any outcome is looked at:
//! the inclusion-defining event (time zero), the eligibility window in which
//! treatment must start to count as "treated", the minimum follow-up, and
//! the outcome horizon. [`build_cohort`] applies the protocol in fixed
//! stages and reports per-stage attrition in a [`FlowchartReport`], so that
//! selection is visible rather than silent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{format_float, EventRecord, EventStore};
use crate::util::mean;

/// Numeric eligibility filter on the first valued event with `code`:
/// patients without such an event, or with a value outside `[min, max]`,
/// are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeFilter {
    pub code: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl RangeFilter {
    fn admits(&self, value: f64) -> bool {
        self.min.map_or(true, |m| value >= m) && self.max.map_or(true, |m| value <= m)
    }

    fn label(&self) -> String {
        let lo = self.min.map(|v| format_float(v)).unwrap_or_else(|| "-inf".into());
        let hi = self.max.map(|v| format_float(v)).unwrap_or_else(|| "inf".into());
        format!("filter {} in [{}, {}]", self.code, lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialProtocol {
    /// Code of the event that defines time zero (first occurrence).
    pub inclusion_code: String,
    /// Treatment must begin within `[t0, t0 + eligibility_window_h)` to
    /// count as treated.
    #[serde(default = "default_eligibility_window")]
    pub eligibility_window_h: f64,
    /// Patients whose outcome occurs before `t0 + min_followup_h` are
    /// dropped.
    #[serde(default = "default_min_followup")]
    pub min_followup_h: f64,
    pub treatment_code: String,
    #[serde(default = "default_outcome_code")]
    pub outcome_code: String,
    /// Outcome is assessed in the closed window `[t0, t0 + outcome_horizon_h]`.
    #[serde(default = "default_outcome_horizon")]
    pub outcome_horizon_h: f64,
    pub confounder_codes: Vec<String>,
    #[serde(default)]
    pub cate_codes: Vec<String>,
    #[serde(default)]
    pub eligibility_filters: Vec<RangeFilter>,
}

fn default_eligibility_window() -> f64 {
    24.0
}

fn default_min_followup() -> f64 {
    24.0
}

fn default_outcome_code() -> String {
    "death".to_string()
}

fn default_outcome_horizon() -> f64 {
    672.0
}

impl TrialProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.inclusion_code.is_empty()
            || self.treatment_code.is_empty()
            || self.outcome_code.is_empty()
        {
            return Err(Error::BadProtocol("codes must be non-empty".into()));
        }
        if self.treatment_code == self.inclusion_code {
            return Err(Error::BadProtocol(
                "treatment code must differ from the inclusion code".into(),
            ));
        }
        for (name, v) in [
            ("eligibility_window_h", self.eligibility_window_h),
            ("min_followup_h", self.min_followup_h),
            ("outcome_horizon_h", self.outcome_horizon_h),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::BadProtocol(format!("{name} must be finite and positive")));
            }
        }
        if self.outcome_horizon_h <= self.eligibility_window_h {
            return Err(Error::BadProtocol(
                "outcome horizon must exceed the eligibility window".into(),
            ));
        }
        if self.confounder_codes.is_empty() {
            return Err(Error::BadProtocol("at least one confounder code is required".into()));
        }
        Ok(())
    }

    /// Same protocol with a different eligibility window.
    pub fn with_window(&self, window_h: f64) -> TrialProtocol {
        TrialProtocol { eligibility_window_h: window_h, ..self.clone() }
    }
}

/// One emulated-trial row. Rows are sorted by `patient_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub patient_id: String,
    /// Time zero: the first inclusion event.
    pub t0_h: f64,
    /// 1 if treatment started inside the eligibility window.
    pub a: u8,
    /// Time of the first in-window treatment event (absent when `a = 0`).
    pub t_treat_h: Option<f64>,
    /// 1 if the outcome occurred within the horizon.
    pub y: u8,
    /// Time of the first in-horizon outcome event (absent when `y = 0`).
    pub t_outcome_h: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowchartStage {
    pub label: String,
    /// Patients still in the cohort after this stage.
    pub remaining: usize,
    /// Patients dropped at this stage.
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowchartReport {
    pub stages: Vec<FlowchartStage>,
}

impl FlowchartReport {
    pub fn initial(&self) -> usize {
        self.stages.first().map_or(0, |s| s.remaining + s.dropped)
    }

    pub fn final_count(&self) -> usize {
        self.stages.last().map_or(0, |s| s.remaining)
    }

    /// Conservation check: every patient is either retained or dropped at
    /// exactly one stage.
    pub fn is_conserved(&self) -> bool {
        let dropped: usize = self.stages.iter().map(|s| s.dropped).sum();
        self.initial() == self.final_count() + dropped
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), json + "\n")?;
        Ok(())
    }
}

fn first_event_with_code<'a>(events: &'a [EventRecord], code: &str) -> Option<&'a EventRecord> {
    events.iter().find(|e| e.code == code)
}

fn first_valued_event<'a>(events: &'a [EventRecord], code: &str) -> Option<&'a EventRecord> {
    events.iter().find(|e| e.code == code && e.value.is_some())
}

/// Applies the protocol to the store: anchors each patient at the first
/// inclusion event, applies eligibility filters, drops patients whose
/// outcome precedes the minimum follow-up, and classifies treatment within
/// the eligibility window and outcome within the horizon.
pub fn build_cohort(
    store: &EventStore,
    protocol: &TrialProtocol,
) -> Result<(Vec<CohortRow>, FlowchartReport)> {
    protocol.validate()?;
    let all: Vec<&str> = store.patient_ids().collect();
    let mut stages = Vec::new();
    stages.push(FlowchartStage { label: "all patients".into(), remaining: all.len(), dropped: 0 });

    // Stage: inclusion event defines time zero.
    let mut current: Vec<(&str, f64)> = Vec::new();
    for id in &all {
        let events = store.events(id)?;
        if let Some(e) = first_event_with_code(events, &protocol.inclusion_code) {
            current.push((id, e.time_h));
        }
    }
    stages.push(FlowchartStage {
        label: "has inclusion event".into(),
        remaining: current.len(),
        dropped: all.len() - current.len(),
    });

    // Stages: numeric eligibility filters, in protocol order.
    for filter in &protocol.eligibility_filters {
        let before = current.len();
        current.retain(|(id, _)| {
            let events = store.events(id).expect("patient vanished");
            first_valued_event(events, &filter.code)
                .map_or(false, |e| filter.admits(e.value.expect("filtered on value")))
        });
        stages.push(FlowchartStage {
            label: filter.label(),
            remaining: current.len(),
            dropped: before - current.len(),
        });
    }

    // Stage: minimum follow-up. Outcomes strictly before t0 + min_followup_h
    // (including any outcome before t0) disqualify the patient.
    let before = current.len();
    current.retain(|(id, t0)| {
        let events = store.events(id).expect("patient vanished");
        !events
            .iter()
            .any(|e| e.code == protocol.outcome_code && e.time_h < t0 + protocol.min_followup_h)
    });
    stages.push(FlowchartStage {
        label: "survives minimum follow-up".into(),
        remaining: current.len(),
        dropped: before - current.len(),
    });

    if current.is_empty() {
        return Err(Error::EmptyCohort);
    }

    let mut rows = Vec::with_capacity(current.len());
    for (id, t0) in current {
        let events = store.events(id)?;
        let treat = events.iter().find(|e| {
            e.code == protocol.treatment_code
                && e.time_h >= t0
                && e.time_h < t0 + protocol.eligibility_window_h
        });
        let outcome = events.iter().find(|e| {
            e.code == protocol.outcome_code
                && e.time_h >= t0
                && e.time_h <= t0 + protocol.outcome_horizon_h
        });
        rows.push(CohortRow {
            patient_id: id.to_string(),
            t0_h: t0,
            a: treat.is_some() as u8,
            t_treat_h: treat.map(|e| e.time_h),
            y: outcome.is_some() as u8,
            t_outcome_h: outcome.map(|e| e.time_h),
        });
    }
    // Store iteration is already id-ordered; keep the contract explicit.
    rows.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok((rows, FlowchartReport { stages }))
}

/// Builds the cohort under each eligibility window, in the given order.
pub fn sweep_eligibility(
    store: &EventStore,
    protocol: &TrialProtocol,
    windows_h: &[f64],
) -> Result<Vec<(f64, Vec<CohortRow>, FlowchartReport)>> {
    if windows_h.is_empty() {
        return Err(Error::BadProtocol("eligibility sweep needs at least one window".into()));
    }
    let mut out = Vec::with_capacity(windows_h.len());
    for &w in windows_h {
        let p = protocol.with_window(w);
        let (rows, flow) = build_cohort(store, &p)?;
        out.push((w, rows, flow));
    }
    Ok(out)
}

/// Mean delay from time zero to treatment start among treated patients;
/// `None` when nobody is treated.
pub fn mean_treatment_gap(rows: &[CohortRow]) -> Option<f64> {
    let gaps: Vec<f64> =
        rows.iter().filter_map(|r| r.t_treat_h.map(|t| t - r.t0_h)).collect();
    if gaps.is_empty() {
        None
    } else {
        Some(mean(&gaps))
    }
}

/// Writes the cohort table CSV with schema
/// `patient_id,t0_h,a,t_treat_h,y,t_outcome_h`; absent times are empty
/// cells.
pub fn write_cohort_csv(rows: &[CohortRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["patient_id", "t0_h", "a", "t_treat_h", "y", "t_outcome_h"])?;
    for r in rows {
        w.write_record([
            r.patient_id.as_str(),
            &format_float(r.t0_h),
            &r.a.to_string(),
            &r.t_treat_h.map(|v| format_float(v)).unwrap_or_default(),
            &r.y.to_string(),
            &r.t_outcome_h.map(|v| format_float(v)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
