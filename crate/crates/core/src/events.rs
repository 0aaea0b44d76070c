//! Event-stream data model and CSV ingestion.
//!
//! A patient's record is a time-ordered list of [`EventRecord`]s anchored at
//! admission (`time_h = 0`). Inputs are assumed to be pre-restricted to a
//! single hospital stay per patient. [`EventStore`] keeps per-patient streams
//! sorted by `(time_h, kind, code)` and enforces the structural invariants at
//! construction time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome code used for mortality throughout the crate.
pub const DEATH_CODE: &str = "death";

const CSV_HEADER: [&str; 5] = ["patient_id", "time_h", "kind", "code", "value"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Admission,
    Measurement,
    Drug,
    Procedure,
    Outcome,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Admission => "Admission",
            EventKind::Measurement => "Measurement",
            EventKind::Drug => "Drug",
            EventKind::Procedure => "Procedure",
            EventKind::Outcome => "Outcome",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = ();

    /// Case-sensitive: only the exact capitalized names are accepted.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "Admission" => Ok(EventKind::Admission),
            "Measurement" => Ok(EventKind::Measurement),
            "Drug" => Ok(EventKind::Drug),
            "Procedure" => Ok(EventKind::Procedure),
            "Outcome" => Ok(EventKind::Outcome),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub patient_id: String,
    /// Hours since admission; finite and non-negative.
    pub time_h: f64,
    pub kind: EventKind,
    pub code: String,
    /// Numeric payload; present for measurements, usually absent otherwise.
    pub value: Option<f64>,
}

impl EventRecord {
    pub fn new(
        patient_id: impl Into<String>,
        time_h: f64,
        kind: EventKind,
        code: impl Into<String>,
        value: Option<f64>,
    ) -> Self {
        EventRecord { patient_id: patient_id.into(), time_h, kind, code: code.into(), value }
    }

    fn sort_key(&self) -> (f64, &'static str, &str) {
        (self.time_h, self.kind.as_str(), &self.code)
    }
}

/// In-memory event store: per-patient streams sorted by
/// `(time_h, kind, code)`, patients ordered by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStore {
    patients: BTreeMap<String, Vec<EventRecord>>,
    codes: BTreeSet<String>,
}

impl EventStore {
    /// Builds a store from records in any order. Validates that times are
    /// finite and non-negative, ids are non-empty, and that no patient has
    /// more than one `Outcome`/`death` event.
    pub fn from_records(records: impl IntoIterator<Item = EventRecord>) -> Result<Self> {
        let mut patients: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
        let mut codes = BTreeSet::new();
        for rec in records {
            if rec.patient_id.is_empty() {
                return Err(Error::BadSpec("empty patient id".into()));
            }
            if !rec.time_h.is_finite() {
                return Err(Error::BadSpec(format!(
                    "non-finite event time for patient {}",
                    rec.patient_id
                )));
            }
            if rec.time_h < 0.0 {
                return Err(Error::BadSpec(format!(
                    "negative event time for patient {}",
                    rec.patient_id
                )));
            }
            codes.insert(rec.code.clone());
            patients.entry(rec.patient_id.clone()).or_default().push(rec);
        }
        for (patient, events) in &mut patients {
            events.sort_by(|a, b| {
                a.sort_key()
                    .0
                    .total_cmp(&b.sort_key().0)
                    .then_with(|| a.kind.as_str().cmp(b.kind.as_str()))
                    .then_with(|| a.code.cmp(&b.code))
            });
            let deaths = events
                .iter()
                .filter(|e| e.kind == EventKind::Outcome && e.code == DEATH_CODE)
                .count();
            if deaths > 1 {
                return Err(Error::DuplicateDeath { patient: patient.clone() });
            }
        }
        Ok(EventStore { patients, codes })
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_events(&self) -> usize {
        self.patients.values().map(Vec::len).sum()
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.patients.keys().map(String::as_str)
    }

    pub fn contains_patient(&self, patient: &str) -> bool {
        self.patients.contains_key(patient)
    }

    /// Whether any event in the store carries this code.
    pub fn has_code(&self, code: &str) -> bool {
        self.codes.contains(code)
    }

    /// All events of one patient in stream order.
    pub fn events(&self, patient: &str) -> Result<&[EventRecord]> {
        self.patients
            .get(patient)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownPatient { patient: patient.to_string() })
    }

    /// Iterates `(patient_id, events)` in patient-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[EventRecord])> {
        self.patients.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Events of `patient` with `code` in the half-open window
    /// `[t_lo, t_hi)`, in stream order. Requires `t_lo <= t_hi`.
    pub fn query_window(
        &self,
        patient: &str,
        t_lo: f64,
        t_hi: f64,
        code: &str,
    ) -> Result<Vec<&EventRecord>> {
        if !(t_lo <= t_hi) {
            return Err(Error::BadSpec(format!("window [{t_lo}, {t_hi}) is inverted")));
        }
        let events = self.events(patient)?;
        Ok(events
            .iter()
            .filter(|e| e.code == code && e.time_h >= t_lo && e.time_h < t_hi)
            .collect())
    }

    /// Merges two stores over disjoint-or-overlapping patient sets by pooling
    /// all records and re-validating; equivalent to building one store from
    /// the union of the raw records.
    pub fn merge(&self, other: &EventStore) -> Result<EventStore> {
        let records = self
            .patients
            .values()
            .chain(other.patients.values())
            .flatten()
            .cloned()
            .collect::<Vec<_>>();
        EventStore::from_records(records)
    }

    /// Restricts the store to the given patients (unknown ids are an error).
    pub fn restrict_to(&self, ids: &BTreeSet<String>) -> Result<EventStore> {
        let mut records = Vec::new();
        for id in ids {
            records.extend(self.events(id)?.iter().cloned());
        }
        EventStore::from_records(records)
    }

    /// Loads a store from CSV with the exact header
    /// `patient_id,time_h,kind,code,value`. Empty `value` cells mean "no
    /// value". Row errors carry 1-based line numbers.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<EventStore> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path.as_ref())?;
        let mut records = Vec::new();
        let mut saw_header = false;
        for (idx, row) in reader.records().enumerate() {
            let line = idx as u64 + 1;
            let row = row?;
            if !saw_header {
                let fields: Vec<&str> = row.iter().collect();
                if fields != CSV_HEADER {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!(
                            "expected header {}, found {}",
                            CSV_HEADER.join(","),
                            fields.join(",")
                        ),
                    });
                }
                saw_header = true;
                continue;
            }
            records.push(parse_row(&row, line)?);
        }
        if !saw_header {
            return Err(Error::MalformedRow { line: 1, reason: "missing header".into() });
        }
        EventStore::from_records(records)
    }

    /// Writes the store as CSV. Round-trips with [`EventStore::load_csv`].
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        writer.write_record(CSV_HEADER)?;
        for (_, events) in self.iter() {
            for e in events {
                writer.write_record([
                    e.patient_id.as_str(),
                    &format_float(e.time_h),
                    e.kind.as_str(),
                    e.code.as_str(),
                    &e.value.map(|v| format_float(v)).unwrap_or_default(),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Shortest-round-trip float formatting (Rust's default `Display` for f64).
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<EventRecord> {
    if row.len() != 5 {
        return Err(Error::MalformedRow {
            line,
            reason: format!("expected 5 fields, found {}", row.len()),
        });
    }
    let patient_id = row[0].to_string();
    if patient_id.is_empty() {
        return Err(Error::MalformedRow { line, reason: "empty patient_id".into() });
    }
    let time_h: f64 = row[1]
        .parse()
        .map_err(|_| Error::MalformedRow { line, reason: format!("bad time_h {:?}", &row[1]) })?;
    if !time_h.is_finite() {
        return Err(Error::MalformedRow { line, reason: "non-finite time_h".into() });
    }
    if time_h < 0.0 {
        return Err(Error::NegativeTime { line });
    }
    let kind = EventKind::from_str(&row[2])
        .map_err(|_| Error::MalformedRow { line, reason: format!("bad kind {:?}", &row[2]) })?;
    let code = row[3].to_string();
    if code.is_empty() {
        return Err(Error::MalformedRow { line, reason: "empty code".into() });
    }
    let value = if row[4].is_empty() {
        None
    } else {
        let v: f64 = row[4].parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("bad value {:?}", &row[4]),
        })?;
        if !v.is_finite() {
            return Err(Error::MalformedRow { line, reason: "non-finite value".into() });
        }
        Some(v)
    };
    Ok(EventRecord { patient_id, time_h, kind, code, value })
}
