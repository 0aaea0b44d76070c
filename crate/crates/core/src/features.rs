//! Baseline feature construction from event streams.
//!
//! Aggregation is confined to the pre-treatment window: for each patient the
//! usable slice is `[0, min(t_treat, t0 + eligibility_window))`, so nothing
//! measured after treatment started can leak into the adjustment set.
//! Missingness is explicit — the design matrix carries a mask — and
//! imputation/standardization are split into fit and apply steps so that
//! held-out rows never influence the fitted statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortRow, TrialProtocol};
use crate::error::{Error, Result};
use crate::events::{format_float, EventKind, EventStore};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationSpec {
    /// First value in the window.
    First,
    /// Last value in the window.
    Last,
    Mean,
    Median,
    /// Both first and last, as `<code>_first` / `<code>_last` columns.
    FirstLast,
}

impl AggregationSpec {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggregationSpec::First => "first",
            AggregationSpec::Last => "last",
            AggregationSpec::Mean => "mean",
            AggregationSpec::Median => "median",
            AggregationSpec::FirstLast => "first_last",
        }
    }

    pub const ALL: [AggregationSpec; 5] = [
        AggregationSpec::First,
        AggregationSpec::Last,
        AggregationSpec::Mean,
        AggregationSpec::Median,
        AggregationSpec::FirstLast,
    ];
}

/// Which upper bound closes the aggregation window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowRule {
    /// `min(t_treat, t0 + eligibility_window)` — the default for causal
    /// adjustment.
    PreTreatment,
    /// `t0 + eligibility_window` regardless of treatment timing; used by
    /// diagnostics that deliberately admit post-treatment information.
    FullEligibility,
}

/// Feature matrix with an explicit missingness mask. `values[r][c]` is
/// meaningful only where `missing[r][c]` is false.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub values: Matrix,
    pub column_names: Vec<String>,
    /// Row-major mask, `rows * cols` entries.
    pub missing: Vec<bool>,
}

impl DesignMatrix {
    pub fn new(values: Matrix, column_names: Vec<String>, missing: Vec<bool>) -> Self {
        assert_eq!(values.cols(), column_names.len(), "column name count mismatch");
        assert_eq!(values.rows() * values.cols(), missing.len(), "mask size mismatch");
        let mut seen = std::collections::BTreeSet::new();
        for name in &column_names {
            assert!(seen.insert(name), "duplicate column name {name}");
        }
        DesignMatrix { values, column_names, missing }
    }

    /// Fully observed matrix.
    pub fn dense(values: Matrix, column_names: Vec<String>) -> Self {
        let missing = vec![false; values.rows() * values.cols()];
        DesignMatrix::new(values, column_names, missing)
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.missing[r * self.cols() + c]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    /// Subset of rows, in the given order (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        let cols = self.cols();
        let mut missing = Vec::with_capacity(idx.len() * cols);
        for &r in idx {
            missing.extend_from_slice(&self.missing[r * cols..(r + 1) * cols]);
        }
        DesignMatrix {
            values: self.values.select_rows(idx),
            column_names: self.column_names.clone(),
            missing,
        }
    }

    /// Marks a whole column missing (used by diagnostics to simulate
    /// deployment-time unavailability of post-treatment features).
    pub fn set_column_missing(&mut self, col: usize) {
        let cols = self.cols();
        for r in 0..self.rows() {
            self.missing[r * cols + col] = true;
            self.values.set(r, col, 0.0);
        }
    }

    pub fn has_any_missing(&self) -> bool {
        self.missing.iter().any(|m| *m)
    }

    /// Writes values (missing cells empty) and, alongside, the mask.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["row".to_string()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.rows() {
            let mut rec = vec![r.to_string()];
            for c in 0..self.cols() {
                rec.push(if self.is_missing(r, c) {
                    String::new()
                } else {
                    format_float(self.values.get(r, c))
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn aggregate_values(agg: AggregationSpec, values: &[f64]) -> Vec<Option<f64>> {
    if values.is_empty() {
        return match agg {
            AggregationSpec::FirstLast => vec![None, None],
            _ => vec![None],
        };
    }
    match agg {
        AggregationSpec::First => vec![Some(values[0])],
        AggregationSpec::Last => vec![Some(values[values.len() - 1])],
        AggregationSpec::Mean => vec![Some(values.iter().sum::<f64>() / values.len() as f64)],
        AggregationSpec::Median => {
            let mut v = values.to_vec();
            v.sort_by(|a, b| a.total_cmp(b));
            let n = v.len();
            let m = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
            vec![Some(m)]
        }
        AggregationSpec::FirstLast => vec![Some(values[0]), Some(values[values.len() - 1])],
    }
}

fn column_names_for(codes: &[String], agg: AggregationSpec) -> Vec<String> {
    match agg {
        AggregationSpec::FirstLast => {
            let mut names: Vec<String> = codes.iter().map(|c| format!("{c}_first")).collect();
            names.extend(codes.iter().map(|c| format!("{c}_last")));
            names
        }
        _ => codes.to_vec(),
    }
}

/// Aggregates the protocol's confounder codes over the pre-treatment window.
/// Codes absent from the whole store produce a warning and an all-missing
/// column; use [`aggregate_strict`] to make that an error instead.
pub fn aggregate(
    store: &EventStore,
    rows: &[CohortRow],
    protocol: &TrialProtocol,
    agg: AggregationSpec,
) -> Result<DesignMatrix> {
    aggregate_codes(store, rows, protocol, &protocol.confounder_codes, agg, WindowRule::PreTreatment, false)
}

/// Like [`aggregate`], but unknown codes are a hard error.
pub fn aggregate_strict(
    store: &EventStore,
    rows: &[CohortRow],
    protocol: &TrialProtocol,
    agg: AggregationSpec,
) -> Result<DesignMatrix> {
    aggregate_codes(store, rows, protocol, &protocol.confounder_codes, agg, WindowRule::PreTreatment, true)
}

/// Fully general aggregation: choose the code list, window rule, and
/// unknown-code strictness.
pub fn aggregate_codes(
    store: &EventStore,
    rows: &[CohortRow],
    protocol: &TrialProtocol,
    codes: &[String],
    agg: AggregationSpec,
    rule: WindowRule,
    strict: bool,
) -> Result<DesignMatrix> {
    if codes.is_empty() {
        return Err(Error::BadProtocol("no feature codes to aggregate".into()));
    }
    for code in codes {
        if !store.has_code(code) {
            if strict {
                return Err(Error::UnknownCode { code: code.clone() });
            }
            log::warn!("code {code} never appears in the event store; column will be all-missing");
        }
    }
    let names = column_names_for(codes, agg);
    let per_code = if agg == AggregationSpec::FirstLast { 2 } else { 1 };
    let n = rows.len();
    let mut values = Matrix::zeros(n, names.len());
    let mut missing = vec![true; n * names.len()];

    for (r, row) in rows.iter().enumerate() {
        let upper = match rule {
            WindowRule::PreTreatment => {
                let cap = row.t0_h + protocol.eligibility_window_h;
                row.t_treat_h.map_or(cap, |t| t.min(cap))
            }
            WindowRule::FullEligibility => row.t0_h + protocol.eligibility_window_h,
        };
        let events = store.events(&row.patient_id)?;
        for (c, code) in codes.iter().enumerate() {
            let vals: Vec<f64> = events
                .iter()
                .filter(|e| {
                    e.kind == EventKind::Measurement
                        && e.code == *code
                        && e.time_h >= 0.0
                        && e.time_h < upper
                })
                .filter_map(|e| e.value)
                .collect();
            for (k, v) in aggregate_values(agg, &vals).into_iter().enumerate() {
                // FirstLast lays out all "_first" columns, then all "_last".
                let col = if per_code == 2 { k * codes.len() + c } else { c };
                if let Some(v) = v {
                    values.set(r, col, v);
                    missing[r * names.len() + col] = false;
                }
            }
        }
    }
    Ok(DesignMatrix::new(values, names, missing))
}

/// Median imputer with missingness indicators, fitted on a subset of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub column_names: Vec<String>,
    /// Per-column fill value: median of the observed fit-row values, or 0
    /// when the column is entirely missing among fit rows.
    pub medians: Vec<f64>,
    /// Columns entirely missing among fit rows (indicator forced).
    pub all_missing: Vec<bool>,
}

/// Fits medians on `fit_rows` only. Every column receives a companion
/// `<name>__missing` indicator on application, so the output schema never
/// depends on which rows happen to contain gaps.
pub fn fit_imputer(dm: &DesignMatrix, fit_rows: &[usize]) -> Result<Imputer> {
    if fit_rows.is_empty() {
        return Err(Error::BadSpec("imputer needs at least one fit row".into()));
    }
    let mut medians = Vec::with_capacity(dm.cols());
    let mut all_missing = Vec::with_capacity(dm.cols());
    for c in 0..dm.cols() {
        let mut vals: Vec<f64> = fit_rows
            .iter()
            .filter(|&&r| !dm.is_missing(r, c))
            .map(|&r| dm.values.get(r, c))
            .collect();
        if vals.is_empty() {
            medians.push(0.0);
            all_missing.push(true);
        } else {
            vals.sort_by(|a, b| a.total_cmp(b));
            let n = vals.len();
            let m = if n % 2 == 1 {
                vals[n / 2]
            } else {
                (vals[n / 2 - 1] + vals[n / 2]) / 2.0
            };
            medians.push(m);
            all_missing.push(false);
        }
    }
    Ok(Imputer { column_names: dm.column_names.clone(), medians, all_missing })
}

/// Applies the imputer to the given rows: missing cells are filled with the
/// fitted medians and one `<name>__missing` indicator column per input
/// column is appended (1 where the cell was missing).
pub fn apply_imputer(imp: &Imputer, dm: &DesignMatrix, rows: &[usize]) -> Result<DesignMatrix> {
    apply_imputer_inner(imp, dm, rows, true)
}

/// Applies medians only, without appending indicator columns. Used where
/// the output dimensionality must equal the input's (e.g. effect-modifier
/// matrices).
pub fn apply_imputer_plain(
    imp: &Imputer,
    dm: &DesignMatrix,
    rows: &[usize],
) -> Result<DesignMatrix> {
    apply_imputer_inner(imp, dm, rows, false)
}

fn apply_imputer_inner(
    imp: &Imputer,
    dm: &DesignMatrix,
    rows: &[usize],
    indicators: bool,
) -> Result<DesignMatrix> {
    if imp.column_names != dm.column_names {
        return Err(Error::ColumnMismatch(format!(
            "imputer fitted on {:?}, applied to {:?}",
            imp.column_names, dm.column_names
        )));
    }
    let d = dm.cols();
    let out_cols = if indicators { 2 * d } else { d };
    let mut values = Matrix::zeros(rows.len(), out_cols);
    for (i, &r) in rows.iter().enumerate() {
        for c in 0..d {
            let miss = dm.is_missing(r, c);
            values.set(i, c, if miss { imp.medians[c] } else { dm.values.get(r, c) });
            if indicators {
                values.set(i, d + c, miss as u8 as f64);
            }
        }
    }
    let mut names = dm.column_names.clone();
    if indicators {
        names.extend(dm.column_names.iter().map(|n| format!("{n}__missing")));
    }
    Ok(DesignMatrix::dense(values, names))
}

/// Z-scoring statistics fitted on a subset of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub column_names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Fits per-column means and standard deviations on `fit_rows`.
/// Zero-variance columns pass through unchanged (mean 0, sd 1).
pub fn fit_scaler(dm: &DesignMatrix, fit_rows: &[usize]) -> Result<Scaler> {
    if fit_rows.is_empty() {
        return Err(Error::BadSpec("scaler needs at least one fit row".into()));
    }
    debug_assert!(
        fit_rows.iter().all(|&r| (0..dm.cols()).all(|c| !dm.is_missing(r, c))),
        "standardize expects an imputed matrix"
    );
    let n = fit_rows.len() as f64;
    let mut means = Vec::with_capacity(dm.cols());
    let mut sds = Vec::with_capacity(dm.cols());
    for c in 0..dm.cols() {
        let m = fit_rows.iter().map(|&r| dm.values.get(r, c)).sum::<f64>() / n;
        let var = fit_rows.iter().map(|&r| (dm.values.get(r, c) - m).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            means.push(m);
            sds.push(sd);
        } else {
            means.push(0.0);
            sds.push(1.0);
        }
    }
    Ok(Scaler { column_names: dm.column_names.clone(), means, sds })
}

impl Scaler {
    /// Applies the fitted transform to all rows of a matrix.
    pub fn apply(&self, dm: &DesignMatrix) -> Result<DesignMatrix> {
        if self.column_names != dm.column_names {
            return Err(Error::ColumnMismatch(format!(
                "scaler fitted on {:?}, applied to {:?}",
                self.column_names, dm.column_names
            )));
        }
        let mut values = dm.values.clone();
        for r in 0..dm.rows() {
            for c in 0..dm.cols() {
                values.set(r, c, (dm.values.get(r, c) - self.means[c]) / self.sds[c]);
            }
        }
        Ok(DesignMatrix::dense(values, dm.column_names.clone()))
    }
}

/// Standardizes the whole matrix using statistics from `fit_rows` only.
pub fn standardize(dm: &DesignMatrix, fit_rows: &[usize]) -> Result<(DesignMatrix, Scaler)> {
    let scaler = fit_scaler(dm, fit_rows)?;
    Ok((scaler.apply(dm)?, scaler))
}
