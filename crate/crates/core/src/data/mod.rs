//! From raw event streams to windowed, normalized tensors.

mod cohort;
mod io;
mod schema;
mod synth;
mod window;

pub use cohort::{
    build_record, build_records, impute, label, median, resample, select_cohort, AuditEntry, Cohort, CohortSpec,
    DropReason, GappyGrid, GridSample, PatientRecord, Stay, SENTINEL,
};
pub use io::{load_events, load_outcomes, read_events, read_outcomes, write_events, write_outcomes, EVENTS_HEADER, OUTCOMES_HEADER};
pub use schema::{EventKind, Feature, Outcome, RawEvent, LAB_COUNT, VITAL_COUNT};
pub use synth::{generate_synthetic_cohort, patient_id, SynthAudit, SynthConfig, SyntheticCohort, DRIFT_TAU_HOURS};
pub use window::{
    apply_normalizer, fit_normalizer, slice_window, window_rows, FeatureRange, NormalizationStats, WindowedDataset,
    WindowedSample,
};
