//! Synthetic ICU cohort with a controllable pre-mortem drift.
//!
//! Every feature of every patient is a stationary AR(1) process around a
//! patient-specific offset. Decedents additionally drift toward the abnormal
//! side of each feature, and the drift grows as the stay approaches its end:
//! `dir · strength · sd · u · exp(−(t_end − t) / 24 h)`. Short prediction
//! windows are therefore easier than long ones.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{CohortSpec, EventKind, Feature, Outcome, RawEvent};
use crate::error::{Error, Result};
use crate::nn::{stream, Rng};

/// Drift time constant in hours.
pub const DRIFT_TAU_HOURS: f64 = 24.0;

struct Profile {
    mean: f64,
    sd: f64,
    /// Direction of deterioration.
    dir: f64,
    /// Chance of a reading per hour (vitals) or per 8 h (labs).
    observe: f64,
    /// Chance the feature is never measured during the stay.
    never: f64,
}

const fn p(mean: f64, sd: f64, dir: f64, observe: f64, never: f64) -> Profile {
    Profile {
        mean,
        sd,
        dir,
        observe,
        never,
    }
}

fn profile(f: Feature) -> Profile {
    use Feature::*;
    match f {
        HeartRate => p(85.0, 15.0, 1.0, 0.9, 0.0),
        SystolicBloodPressure => p(120.0, 18.0, -1.0, 0.8, 0.0),
        DiastolicBloodPressure => p(65.0, 10.0, -1.0, 0.8, 0.0),
        MeanBloodPressure => p(80.0, 12.0, -1.0, 0.8, 0.02),
        RespiratoryRate => p(18.0, 4.0, 1.0, 0.85, 0.0),
        CoreTemperature => p(37.0, 0.6, 1.0, 0.4, 0.05),
        Spo2 => p(97.0, 2.0, -1.0, 0.85, 0.0),
        Albumin => p(3.2, 0.6, -1.0, 0.4, 0.4),
        Bun => p(20.0, 10.0, 1.0, 0.8, 0.02),
        Bilirubin => p(1.0, 0.8, 1.0, 0.4, 0.3),
        Lactate => p(1.8, 0.9, 1.0, 0.4, 0.3),
        Bicarbonate => p(24.0, 3.0, -1.0, 0.8, 0.02),
        Bands => p(5.0, 4.0, 1.0, 0.2, 0.7),
        Chloride => p(104.0, 4.0, 1.0, 0.8, 0.02),
        Creatinine => p(1.1, 0.5, 1.0, 0.8, 0.02),
        Glucose => p(130.0, 35.0, 1.0, 0.8, 0.02),
        Hemoglobin => p(10.5, 1.6, -1.0, 0.75, 0.03),
        Hematocrit => p(31.0, 4.5, -1.0, 0.75, 0.03),
        Platelets => p(220.0, 80.0, -1.0, 0.75, 0.03),
        Potassium => p(4.1, 0.5, 1.0, 0.8, 0.02),
        Ptt => p(33.0, 8.0, 1.0, 0.5, 0.2),
        Sodium => p(139.0, 4.0, -1.0, 0.8, 0.02),
        WhiteBloodCells => p(10.0, 4.0, 1.0, 0.75, 0.03),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub death_rate: f64,
    pub drift_strength: f64,
    /// Share of patients with a second ICU stay (dropped by selection).
    pub readmission_rate: f64,
    /// Share of survivors who die after discharge (labelled 0).
    pub post_discharge_death_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 10_000,
            death_rate: 0.044,
            drift_strength: 1.75,
            readmission_rate: 0.1,
            post_discharge_death_rate: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.death_rate > 0.0 && self.death_rate < 1.0) {
            return Err(Error::Validation(format!("death_rate must lie in (0, 1), got {}", self.death_rate)));
        }
        if self.n_patients == 0 {
            return Err(Error::Validation("n_patients must be positive".into()));
        }
        if !(self.drift_strength >= 0.0 && self.drift_strength.is_finite()) {
            return Err(Error::Validation("drift_strength must be finite and non-negative".into()));
        }
        for (name, r) in [
            ("readmission_rate", self.readmission_rate),
            ("post_discharge_death_rate", self.post_discharge_death_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthAudit {
    pub seed: u64,
    pub n_patients: usize,
    pub deaths_in_icu: usize,
    pub post_discharge_deaths: usize,
    pub readmissions: usize,
    pub events: usize,
    pub drift_strength: f64,
    pub dt_min_hours: f64,
    pub dt_max_hours: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub events: Vec<RawEvent>,
    pub outcomes: Vec<Outcome>,
    pub audit: SynthAudit,
}

pub fn patient_id(i: usize) -> String {
    format!("p{i:06}")
}

pub fn generate_synthetic_cohort(seed: u64, config: &SynthConfig, spec: &CohortSpec) -> Result<SyntheticCohort> {
    config.validate()?;
    spec.validate()?;
    let n = config.n_patients;
    let deaths = ((n as f64) * config.death_rate).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, &[stream::SYNTH, u64::MAX]).shuffle(&mut order);
    let mut dies = vec![false; n];
    for &i in &order[..deaths] {
        dies[i] = true;
    }

    let mut events = Vec::new();
    let mut outcomes = Vec::with_capacity(n);
    let mut readmissions = 0;
    let mut post_discharge = 0;
    for (i, &died) in dies.iter().enumerate() {
        let mut rng = Rng::derive(seed, &[stream::SYNTH, i as u64]);
        let id: Arc<str> = patient_id(i).into();
        let stay = rng.uniform(spec.dt_min_hours, spec.dt_max_hours);
        patient_events(&mut rng, &id, stay, died, config.drift_strength, &mut events);

        let mut death = died.then_some(stay);
        if !died && rng.bernoulli(config.post_discharge_death_rate) {
            death = Some(stay + rng.uniform(24.0, 240.0));
            post_discharge += 1;
        }
        if rng.bernoulli(config.readmission_rate) {
            readmissions += 1;
            let len = rng.uniform(spec.dt_min_hours, spec.dt_max_hours);
            for t in [0.0, len / 2.0, len] {
                events.push(RawEvent {
                    patient_id: id.clone(),
                    stay_seq: 2,
                    kind: EventKind::Vital,
                    feature: Feature::HeartRate,
                    t_rel_hours: t,
                    value: rng.normal(90.0, 10.0).max(1.0),
                });
            }
        }
        outcomes.push(Outcome {
            patient_id: id,
            death_t_rel_hours: death,
        });
    }
    let audit = SynthAudit {
        seed,
        n_patients: n,
        deaths_in_icu: deaths,
        post_discharge_deaths: post_discharge,
        readmissions,
        events: events.len(),
        drift_strength: config.drift_strength,
        dt_min_hours: spec.dt_min_hours,
        dt_max_hours: spec.dt_max_hours,
    };
    Ok(SyntheticCohort {
        events,
        outcomes,
        audit,
    })
}

fn patient_events(rng: &mut Rng, id: &Arc<str>, stay: f64, died: bool, strength: f64, out: &mut Vec<RawEvent>) {
    const PHI: f64 = 0.9;
    let hours = stay.ceil() as usize + 1;
    for &f in Feature::ALL {
        let pr = profile(f);
        let offset = rng.normal(0.0, 0.6 * pr.sd);
        let weight = rng.uniform(0.0, 2.0);
        let never = rng.bernoulli(pr.never);
        // hourly latent deviation
        let mut latent = Vec::with_capacity(hours);
        let mut a = rng.normal(0.0, 0.3 * pr.sd);
        for _ in 0..hours {
            latent.push(a);
            a = PHI * a + (1.0 - PHI * PHI).sqrt() * rng.normal(0.0, 0.3 * pr.sd);
        }
        let value_at = |rng: &mut Rng, t: f64| {
            let drift = if died {
                pr.dir * strength * pr.sd * weight * (-(stay - t) / DRIFT_TAU_HOURS).exp()
            } else {
                0.0
            };
            let v = pr.mean + offset + latent[t as usize] + drift + rng.normal(0.0, 0.2 * pr.sd);
            v.max(0.01 * pr.mean)
        };
        let mut times = Vec::new();
        match f.kind() {
            EventKind::Vital => {
                for h in 0..stay.ceil() as usize {
                    if rng.bernoulli(pr.observe) {
                        let t = h as f64 + rng.uniform(0.0, 1.0);
                        if t < stay {
                            times.push(t);
                        }
                    }
                }
                if f == Feature::HeartRate {
                    // admission and discharge/death anchor the stay
                    times.insert(0, 0.0);
                    times.push(stay);
                }
            }
            EventKind::Lab => {
                for b in 0..(stay / 8.0).ceil() as usize {
                    if rng.bernoulli(pr.observe) {
                        let t = b as f64 * 8.0 + rng.uniform(0.0, 8.0);
                        if t < stay {
                            times.push(t);
                        }
                    }
                }
            }
        }
        if never && f != Feature::HeartRate {
            continue;
        }
        for t in times {
            let value = value_at(rng, t);
            out.push(RawEvent {
                patient_id: id.clone(),
                stay_seq: 1,
                kind: f.kind(),
                feature: f,
                t_rel_hours: t,
                value,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_records, select_cohort};

    fn small(n: usize, drift: f64) -> SynthConfig {
        SynthConfig {
            n_patients: n,
            drift_strength: drift,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = CohortSpec::default();
        let a = generate_synthetic_cohort(3, &small(50, 1.0), &spec).unwrap();
        let b = generate_synthetic_cohort(3, &small(50, 1.0), &spec).unwrap();
        let c = generate_synthetic_cohort(4, &small(50, 1.0), &spec).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.outcomes, b.outcomes);
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn exact_death_count() {
        let g = generate_synthetic_cohort(0, &small(10_000, 1.0), &CohortSpec::default()).unwrap();
        assert_eq!(g.audit.deaths_in_icu, 440);
        let c = select_cohort(g.events, &g.outcomes, &CohortSpec::default()).unwrap();
        assert_eq!(c.stays.len(), 10_000);
        assert_eq!(c.deaths(), 440);
    }

    #[test]
    fn invalid_death_rate() {
        for r in [0.0, 1.0, -0.1, f64::NAN] {
            let cfg = SynthConfig {
                death_rate: r,
                ..small(10, 1.0)
            };
            assert!(generate_synthetic_cohort(0, &cfg, &CohortSpec::default()).is_err());
        }
    }

    #[test]
    fn stays_within_bounds_and_sentinels_appear() {
        let spec = CohortSpec::default();
        let g = generate_synthetic_cohort(1, &small(300, 1.0), &spec).unwrap();
        let c = select_cohort(g.events, &g.outcomes, &spec).unwrap();
        assert_eq!(c.stays.len(), 300);
        assert!(c.audit.is_empty());
        let recs = build_records(&c);
        assert!(recs.iter().any(|r| r.labs_grid.as_slice().contains(&-1.0)));
        for r in &recs {
            assert!(r.stay_hours >= 24.0 && r.stay_hours <= 72.0);
            assert!(r.vitals_grid.is_finite() && r.labs_grid.is_finite());
        }
    }
}
