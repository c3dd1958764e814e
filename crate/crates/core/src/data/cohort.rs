//! Cohort selection, resampling, imputation and labeling.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{EventKind, Outcome, RawEvent, LAB_COUNT, VITAL_COUNT};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Value written into cells of features never observed during a stay.
pub const SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub dt_min_hours: f64,
    pub dt_max_hours: f64,
    pub vitals_interval_hours: f64,
    pub labs_interval_hours: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            dt_min_hours: 24.0,
            dt_max_hours: 72.0,
            vitals_interval_hours: 1.0,
            labs_interval_hours: 8.0,
        }
    }
}

impl CohortSpec {
    pub fn new(dt_min_hours: f64, dt_max_hours: f64) -> Self {
        Self {
            dt_min_hours,
            dt_max_hours,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min_hours > 0.0 && self.dt_min_hours <= self.dt_max_hours && self.dt_max_hours.is_finite()) {
            return Err(Error::Validation(format!(
                "cohort needs 0 < dt_min <= dt_max, got dt_min={} dt_max={}",
                self.dt_min_hours, self.dt_max_hours
            )));
        }
        if !(self.vitals_interval_hours > 0.0 && self.labs_interval_hours > 0.0) {
            return Err(Error::Validation("resampling intervals must be positive".into()));
        }
        Ok(())
    }

    pub fn retains(&self, stay_hours: f64) -> bool {
        stay_hours >= self.dt_min_hours && stay_hours <= self.dt_max_hours
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    NoEvents,
    NoFirstStay,
    TooShort,
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub patient_id: Arc<str>,
    #[serde(flatten)]
    pub reason: DropReason,
    pub stay_hours: Option<f64>,
}

/// A retained first ICU stay with its events.
#[derive(Debug, Clone)]
pub struct Stay {
    pub patient_id: Arc<str>,
    /// Admission: first vital sign, or the logged admission (t = 0) without vitals.
    pub t_adm: f64,
    /// Discharge or death: the last recorded event of the stay.
    pub t_end: f64,
    pub stay_hours: f64,
    pub label: u8,
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub spec: CohortSpec,
    /// Sorted by patient id.
    pub stays: Vec<Stay>,
    pub audit: Vec<AuditEntry>,
    pub later_stay_events_dropped: usize,
}

impl Cohort {
    pub fn deaths(&self) -> usize {
        self.stays.iter().filter(|s| s.label == 1).count()
    }
}

/// 1 iff a death time falls inside `[t_adm, t_end]`.
pub fn label(t_adm: f64, t_end: f64, death_t_rel_hours: Option<f64>) -> u8 {
    match death_t_rel_hours {
        Some(t) if t >= t_adm && t <= t_end => 1,
        _ => 0,
    }
}

/// Keeps each patient's first ICU stay if its length lies in
/// `[dt_min, dt_max]`. Dropped patients are recorded in the audit log.
pub fn select_cohort(
    events: impl IntoIterator<Item = RawEvent>,
    outcomes: &[Outcome],
    spec: &CohortSpec,
) -> Result<Cohort> {
    spec.validate()?;
    let mut by_patient: BTreeMap<Arc<str>, Vec<RawEvent>> = BTreeMap::new();
    let mut has_events: BTreeMap<Arc<str>, ()> = BTreeMap::new();
    let mut later = 0usize;
    for e in events {
        e.validate()?;
        has_events.insert(e.patient_id.clone(), ());
        if e.stay_seq == 1 {
            by_patient.entry(e.patient_id.clone()).or_default().push(e);
        } else {
            later += 1;
        }
    }

    let deaths: BTreeMap<&str, Option<f64>> = outcomes
        .iter()
        .map(|o| (&*o.patient_id, o.death_t_rel_hours))
        .collect();

    let mut audit = Vec::new();
    for o in outcomes {
        if !has_events.contains_key(&o.patient_id) {
            audit.push(AuditEntry {
                patient_id: o.patient_id.clone(),
                reason: DropReason::NoEvents,
                stay_hours: None,
            });
        }
    }
    for id in has_events.keys() {
        if !by_patient.contains_key(id) {
            audit.push(AuditEntry {
                patient_id: id.clone(),
                reason: DropReason::NoFirstStay,
                stay_hours: None,
            });
        }
    }

    let mut stays = Vec::new();
    for (id, mut evs) in by_patient {
        evs.sort_by(|a, b| {
            a.t_rel_hours
                .total_cmp(&b.t_rel_hours)
                .then(a.kind.cmp(&b.kind))
                .then(a.feature.cmp(&b.feature))
                .then(a.value.total_cmp(&b.value))
        });
        let t_adm = evs
            .iter()
            .find(|e| e.kind == EventKind::Vital)
            .map_or(0.0, |e| e.t_rel_hours);
        let t_end = evs.last().map_or(t_adm, |e| e.t_rel_hours).max(t_adm);
        let stay_hours = t_end - t_adm;
        let reason = if stay_hours < spec.dt_min_hours {
            Some(DropReason::TooShort)
        } else if stay_hours > spec.dt_max_hours {
            Some(DropReason::TooLong)
        } else {
            None
        };
        if let Some(reason) = reason {
            audit.push(AuditEntry {
                patient_id: id,
                reason,
                stay_hours: Some(stay_hours),
            });
            continue;
        }
        let death = deaths.get(&*id).copied().flatten();
        stays.push(Stay {
            label: label(t_adm, t_end, death),
            patient_id: id,
            t_adm,
            t_end,
            stay_hours,
            events: evs,
        });
    }
    audit.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    if !audit.is_empty() {
        log::info!("cohort selection dropped {} patients", audit.len());
    }
    Ok(Cohort {
        spec: spec.clone(),
        stays,
        audit,
        later_stay_events_dropped: later,
    })
}

/// Grid cell with an optional value; `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct GappyGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<f64>>,
}

impl GappyGrid {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.cells[r * self.cols + c]
    }
}

/// One measurement relative to the start of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSample {
    pub column: usize,
    pub t_hours: f64,
    pub value: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Bins samples into `[b·interval, (b+1)·interval)` and aggregates each bin
/// with the median. A sample exactly at the end of the last bin is kept in
/// that bin; samples outside `[0, rows·interval]` are discarded.
pub fn resample(samples: &[GridSample], cols: usize, interval_hours: f64, rows: usize) -> GappyGrid {
    assert!(interval_hours > 0.0, "interval must be positive");
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); rows * cols];
    let span = rows as f64 * interval_hours;
    for s in samples {
        if s.column >= cols || s.t_hours < 0.0 || s.t_hours > span || rows == 0 {
            continue;
        }
        let b = ((s.t_hours / interval_hours).floor() as usize).min(rows - 1);
        bins[b * cols + s.column].push(s.value);
    }
    GappyGrid {
        rows,
        cols,
        cells: bins
            .into_iter()
            .map(|mut v| if v.is_empty() { None } else { Some(median(&mut v)) })
            .collect(),
    }
}

/// Forward fill, then backward fill of leading gaps; a column without any
/// observation becomes [`SENTINEL`].
pub fn impute(grid: &GappyGrid) -> Matrix {
    let mut out = Matrix::zeros(grid.rows, grid.cols);
    for c in 0..grid.cols {
        let first = (0..grid.rows).find_map(|r| grid.get(r, c));
        let mut last = first.unwrap_or(SENTINEL);
        for r in 0..grid.rows {
            if let Some(v) = grid.get(r, c) {
                last = v;
            }
            out.set(r, c, last);
        }
    }
    out
}

/// A fully imputed first stay.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: Arc<str>,
    /// `ceil(stay / vitals_interval) × 7`
    pub vitals_grid: Matrix,
    /// `ceil(stay / labs_interval) × 16`
    pub labs_grid: Matrix,
    pub label: u8,
    pub stay_hours: f64,
}

fn grid_rows(stay_hours: f64, interval: f64) -> usize {
    ((stay_hours / interval).ceil() as usize).max(1)
}

pub fn build_record(stay: &Stay, spec: &CohortSpec) -> PatientRecord {
    let mut vitals = Vec::new();
    let mut labs = Vec::new();
    for e in &stay.events {
        let t = e.t_rel_hours - stay.t_adm;
        let s = GridSample {
            column: e.feature.column(),
            t_hours: t,
            value: e.value,
        };
        match e.kind {
            EventKind::Vital => vitals.push(s),
            EventKind::Lab => labs.push(s),
        }
    }
    let vr = grid_rows(stay.stay_hours, spec.vitals_interval_hours);
    let lr = grid_rows(stay.stay_hours, spec.labs_interval_hours);
    PatientRecord {
        patient_id: stay.patient_id.clone(),
        vitals_grid: impute(&resample(&vitals, VITAL_COUNT, spec.vitals_interval_hours, vr)),
        labs_grid: impute(&resample(&labs, LAB_COUNT, spec.labs_interval_hours, lr)),
        label: stay.label,
        stay_hours: stay.stay_hours,
    }
}

/// Records for every retained stay, in patient-id order.
pub fn build_records(cohort: &Cohort) -> Vec<PatientRecord> {
    cohort.stays.iter().map(|s| build_record(s, &cohort.spec)).collect()
}
