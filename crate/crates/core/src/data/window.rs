//! History windows anchored at admission, and min/max normalization.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{CohortSpec, PatientRecord, LAB_COUNT, SENTINEL, VITAL_COUNT};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// First `dt_data` hours of a stay.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub patient_id: Arc<str>,
    pub vitals: Matrix,
    pub labs: Matrix,
    pub label: u8,
    pub dt_pred_hours: f64,
}

pub fn window_rows(dt_data_hours: f64, interval_hours: f64) -> usize {
    (dt_data_hours / interval_hours).ceil() as usize
}

pub fn slice_window(record: &PatientRecord, dt_data_hours: f64, spec: &CohortSpec) -> Result<WindowedSample> {
    if !(dt_data_hours > 0.0) || dt_data_hours > spec.dt_min_hours {
        return Err(Error::Config(format!(
            "history window {dt_data_hours} h must be positive and at most dt_min = {} h",
            spec.dt_min_hours
        )));
    }
    if record.stay_hours < dt_data_hours {
        return Err(Error::Validation(format!(
            "patient {} stayed {} h, shorter than the {dt_data_hours} h window",
            record.patient_id, record.stay_hours
        )));
    }
    let vr = window_rows(dt_data_hours, spec.vitals_interval_hours);
    let lr = window_rows(dt_data_hours, spec.labs_interval_hours);
    Ok(WindowedSample {
        patient_id: record.patient_id.clone(),
        vitals: head_rows(&record.vitals_grid, vr, "vitals_grid")?,
        labs: head_rows(&record.labs_grid, lr, "labs_grid")?,
        label: record.label,
        dt_pred_hours: record.stay_hours - dt_data_hours,
    })
}

fn head_rows(m: &Matrix, rows: usize, what: &str) -> Result<Matrix> {
    if m.rows() < rows {
        return Err(Error::dim(what, format!("at least {rows} rows"), format!("{} rows", m.rows())));
    }
    Matrix::from_vec(rows, m.cols(), m.as_slice()[..rows * m.cols()].to_vec())
}

/// Windowed samples of one cohort, sorted by patient id.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub dt_data_hours: f64,
    pub samples: Vec<WindowedSample>,
    index: HashMap<Arc<str>, usize>,
}

impl WindowedDataset {
    pub fn build(records: &[PatientRecord], dt_data_hours: f64, spec: &CohortSpec) -> Result<Self> {
        let mut samples = records
            .iter()
            .map(|r| slice_window(r, dt_data_hours, spec))
            .collect::<Result<Vec<_>>>()?;
        samples.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        Self::from_samples(dt_data_hours, samples)
    }

    pub fn from_samples(dt_data_hours: f64, samples: Vec<WindowedSample>) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if index.insert(s.patient_id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate patient id {}", s.patient_id)));
            }
        }
        Ok(Self {
            dt_data_hours,
            samples,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&WindowedSample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    /// Samples for `ids`, in the order given.
    pub fn select(&self, ids: &[Arc<str>]) -> Result<Vec<&WindowedSample>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::Validation(format!("patient {id} is not in the dataset")))
            })
            .collect()
    }

    pub fn ids_and_labels(&self) -> Vec<(Arc<str>, u8)> {
        self.samples.iter().map(|s| (s.patient_id.clone(), s.label)).collect()
    }
}

/// Per-feature range for one kind of measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureRange {
    fn fit<'a>(cols: usize, grids: impl Iterator<Item = &'a Matrix>) -> Self {
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for g in grids {
            for row in 0..g.rows() {
                for (c, &v) in g.row(row).iter().enumerate() {
                    if v == SENTINEL {
                        continue;
                    }
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        for c in 0..cols {
            if min[c] > max[c] {
                min[c] = 0.0;
                max[c] = 0.0;
            }
        }
        Self { min, max }
    }

    fn apply(&self, g: &Matrix) -> Matrix {
        let mut out = g.clone();
        let cols = g.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            if *v == SENTINEL {
                continue;
            }
            let c = i % cols;
            let span = self.max[c] - self.min[c];
            *v = if span > 0.0 { (*v - self.min[c]) / span } else { 0.0 };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub vitals: FeatureRange,
    pub labs: FeatureRange,
}

/// Min/max over the given samples, ignoring sentinel cells. A feature with
/// no observed cell gets `min = max = 0`.
pub fn fit_normalizer<'a>(samples: impl IntoIterator<Item = &'a WindowedSample> + Clone) -> NormalizationStats {
    NormalizationStats {
        vitals: FeatureRange::fit(VITAL_COUNT, samples.clone().into_iter().map(|s| &s.vitals)),
        labs: FeatureRange::fit(LAB_COUNT, samples.into_iter().map(|s| &s.labs)),
    }
}

/// `(x − min) / (max − min)`; sentinels pass through, constant features map to 0.
pub fn apply_normalizer(stats: &NormalizationStats, sample: &WindowedSample) -> WindowedSample {
    WindowedSample {
        vitals: stats.vitals.apply(&sample.vitals),
        labs: stats.labs.apply(&sample.labs),
        ..sample.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(stay: f64) -> PatientRecord {
        let vr = (stay.ceil() as usize).max(1);
        let lr = ((stay / 8.0).ceil() as usize).max(1);
        let vitals = Matrix::from_vec(vr, VITAL_COUNT, (0..vr * VITAL_COUNT).map(|i| i as f64).collect()).unwrap();
        PatientRecord {
            patient_id: "p".into(),
            vitals_grid: vitals,
            labs_grid: Matrix::filled(lr, LAB_COUNT, 2.0),
            label: 0,
            stay_hours: stay,
        }
    }

    fn sample(vitals: Vec<f64>) -> WindowedSample {
        WindowedSample {
            patient_id: "s".into(),
            vitals: Matrix::from_vec(vitals.len() / VITAL_COUNT, VITAL_COUNT, vitals).unwrap(),
            labs: Matrix::filled(1, LAB_COUNT, SENTINEL),
            label: 0,
            dt_pred_hours: 0.0,
        }
    }

    #[test]
    fn prediction_window() {
        let spec = CohortSpec::default();
        let w = slice_window(&record(43.2), 24.0, &spec).unwrap();
        assert!((w.dt_pred_hours - 19.2).abs() < 1e-12);
        assert_eq!(w.vitals.shape(), (24, VITAL_COUNT));
        assert_eq!(w.labs.shape(), (3, LAB_COUNT));
        assert_eq!(w.vitals.row(23), record(43.2).vitals_grid.row(23));
    }

    #[test]
    fn eight_hour_window() {
        let w = slice_window(&record(30.0), 8.0, &CohortSpec::default()).unwrap();
        assert_eq!(w.vitals.rows(), 8);
        assert_eq!(w.labs.rows(), 1);
    }

    #[test]
    fn window_equal_to_stay() {
        let w = slice_window(&record(24.0), 24.0, &CohortSpec::default()).unwrap();
        assert_eq!(w.dt_pred_hours, 0.0);
    }

    #[test]
    fn window_longer_than_dt_min_rejected() {
        let err = slice_window(&record(40.0), 32.0, &CohortSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn normalizer_formula() {
        let mut v = vec![SENTINEL; 2 * VITAL_COUNT];
        v[0] = 2.0;
        v[VITAL_COUNT] = 10.0;
        v[1] = 4.0;
        v[VITAL_COUNT + 1] = 4.0;
        let s = sample(v);
        let stats = fit_normalizer([&s]);
        assert_eq!((stats.vitals.min[0], stats.vitals.max[0]), (2.0, 10.0));
        assert_eq!((stats.labs.min[3], stats.labs.max[3]), (0.0, 0.0));

        let mut q = vec![SENTINEL; VITAL_COUNT];
        q[0] = 6.0;
        q[1] = 4.0;
        let out = apply_normalizer(&stats, &sample(q.clone()));
        assert_eq!(out.vitals.get(0, 0), 0.5);
        assert_eq!(out.vitals.get(0, 1), 0.0);
        assert_eq!(out.vitals.get(0, 2), SENTINEL);
        assert!(out.labs.as_slice().iter().all(|&x| x == SENTINEL));

        q[0] = 0.0;
        assert_eq!(apply_normalizer(&stats, &sample(q)).vitals.get(0, 0), -0.25);
    }

    #[test]
    fn dataset_lookup_and_duplicates() {
        let spec = CohortSpec::default();
        let mut a = record(30.0);
        a.patient_id = "b".into();
        let mut b = record(30.0);
        b.patient_id = "a".into();
        let ds = WindowedDataset::build(&[a.clone(), b], 8.0, &spec).unwrap();
        assert_eq!(&*ds.samples[0].patient_id, "a");
        assert!(ds.get("b").is_some());
        assert!(ds.select(&["zz".into()]).is_err());
        assert!(WindowedDataset::build(&[a.clone(), a], 8.0, &spec).is_err());
    }
}
