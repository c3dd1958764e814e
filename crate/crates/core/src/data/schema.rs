//! Event vocabulary: the 7 hourly vital signs and 16 lab values.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Vital,
    Lab,
}

macro_rules! features {
    ($( $variant:ident => $name:literal, $kind:ident, $col:literal; )*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Feature {
            $( $variant, )*
        }

        impl Feature {
            pub const ALL: &'static [Feature] = &[$( Feature::$variant, )*];

            pub fn name(self) -> &'static str {
                match self {
                    $( Feature::$variant => $name, )*
                }
            }

            pub fn kind(self) -> EventKind {
                match self {
                    $( Feature::$variant => EventKind::$kind, )*
                }
            }

            /// Column of this feature inside its kind's grid.
            pub fn column(self) -> usize {
                match self {
                    $( Feature::$variant => $col, )*
                }
            }
        }
    };
}

features! {
    HeartRate => "heart_rate", Vital, 0;
    SystolicBloodPressure => "systolic_blood_pressure", Vital, 1;
    DiastolicBloodPressure => "diastolic_blood_pressure", Vital, 2;
    MeanBloodPressure => "mean_blood_pressure", Vital, 3;
    RespiratoryRate => "respiratory_rate", Vital, 4;
    CoreTemperature => "core_temperature", Vital, 5;
    Spo2 => "spo2", Vital, 6;
    Albumin => "albumin", Lab, 0;
    Bun => "bun", Lab, 1;
    Bilirubin => "bilirubin", Lab, 2;
    Lactate => "lactate", Lab, 3;
    Bicarbonate => "bicarbonate", Lab, 4;
    Bands => "bands", Lab, 5;
    Chloride => "chloride", Lab, 6;
    Creatinine => "creatinine", Lab, 7;
    Glucose => "glucose", Lab, 8;
    Hemoglobin => "hemoglobin", Lab, 9;
    Hematocrit => "hematocrit", Lab, 10;
    Platelets => "platelets", Lab, 11;
    Potassium => "potassium", Lab, 12;
    Ptt => "ptt", Lab, 13;
    Sodium => "sodium", Lab, 14;
    WhiteBloodCells => "white_blood_cells", Lab, 15;
}

pub const VITAL_COUNT: usize = 7;
pub const LAB_COUNT: usize = 16;

impl Feature {
    pub fn of_kind(kind: EventKind) -> impl Iterator<Item = Feature> {
        Feature::ALL.iter().copied().filter(move |f| f.kind() == kind)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown feature `{s}`")))
    }
}

impl Serialize for Feature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One measurement, timestamped in hours since ICU admission of its stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub patient_id: Arc<str>,
    pub stay_seq: u32,
    pub kind: EventKind,
    pub feature: Feature,
    pub t_rel_hours: f64,
    pub value: f64,
}

impl RawEvent {
    pub fn validate(&self) -> Result<()> {
        if self.feature.kind() != self.kind {
            return Err(Error::Validation(format!(
                "feature `{}` is not a {:?} (patient {})",
                self.feature, self.kind, self.patient_id
            )));
        }
        if !self.t_rel_hours.is_finite() || self.t_rel_hours < 0.0 {
            return Err(Error::Validation(format!(
                "event time {} for patient {} must be finite and non-negative",
                self.t_rel_hours, self.patient_id
            )));
        }
        if !self.value.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite `{}` value for patient {}",
                self.feature, self.patient_id
            )));
        }
        Ok(())
    }
}

/// Row of the outcomes table; `None` means the patient survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub patient_id: Arc<str>,
    pub death_t_rel_hours: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_counts_and_columns() {
        let vitals: Vec<_> = Feature::of_kind(EventKind::Vital).collect();
        let labs: Vec<_> = Feature::of_kind(EventKind::Lab).collect();
        assert_eq!(vitals.len(), VITAL_COUNT);
        assert_eq!(labs.len(), LAB_COUNT);
        for (i, f) in vitals.iter().enumerate() {
            assert_eq!(f.column(), i);
        }
        for (i, f) in labs.iter().enumerate() {
            assert_eq!(f.column(), i);
        }
    }

    #[test]
    fn names_roundtrip() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), *f);
            assert_eq!(f.name(), f.name().to_lowercase());
        }
        assert!("SpO2".parse::<Feature>().is_err());
        assert_eq!("ptt".parse::<Feature>().unwrap(), Feature::Ptt);
    }

    #[test]
    fn kind_mismatch_is_invalid() {
        let e = RawEvent {
            patient_id: "p".into(),
            stay_seq: 1,
            kind: EventKind::Lab,
            feature: Feature::HeartRate,
            t_rel_hours: 1.0,
            value: 80.0,
        };
        assert!(e.validate().is_err());
    }
}
