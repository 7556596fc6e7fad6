//! Patient trajectories and their compilation into MDP transitions.
//!
//! A [`PatientRecord`] holds raw, unevenly sampled observations. Records are
//! resampled onto a uniform decision grid ([`resample_trajectory`]), z-scored
//! with training-fold statistics ([`FeatureStats`]) and turned into
//! [`Transition`]s that carry the terminal ±15 reward.

mod generator;
mod io;
mod normalize;
mod resample;
mod schema;
mod split;

pub use generator::{
    generate_synthetic_cohort, BoundDoseProfile, DoseTerm, DosePolicy, GeneratorConfig, HazardModel, OptimalDoseProfile,
};
pub use io::{load_cohort, write_cohort, write_cohort_file, RowDiagnostic};
pub use normalize::{normalize_features, raw_feature_means, FeatureStats};
pub use resample::{
    build_transitions, impute_linear, resample_trajectory, ResampleOptions, RewardScheme,
};
pub use schema::{FeatureKind, FeatureSchema};
pub use split::{hospital_labels, split_by_hospital, Fold};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound of the action space, L/min.
pub const MAX_FLOW: f64 = 60.0;

/// Reward released when a trajectory ends in discharge.
pub const DISCHARGE_REWARD: f64 = 15.0;

/// Reward released when a trajectory ends in death.
pub const DEATH_REWARD: f64 = -15.0;

pub const HOURS_PER_DAY: f64 = 24.0;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("schema line {line}: {reason}")]
    SchemaSyntax { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("{} row(s) rejected:\n{}", .0.len(), format_rows(.0))]
    RejectedRows(Vec<RowDiagnostic>),
    #[error("patient {patient}: {reason}")]
    InvalidRecord { patient: String, reason: String },
    #[error("patient {patient}: feature `{feature}` has no observations")]
    MissingFeature { patient: String, feature: String },
    #[error("series is empty")]
    EmptySeries,
    #[error("patient {0}: no observed features")]
    UnusableRecord(String),
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("generator config: {0}")]
    Config(String),
    #[error("partition: {0}")]
    Partition(String),
}

fn format_rows(rows: &[RowDiagnostic]) -> String {
    rows.iter()
        .map(|r| format!("  line {}: {}", r.line, r.reason))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One timestamped measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Hours since admission.
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Discharged,
    Died,
    Censored,
}

impl Outcome {
    /// CSV encoding: 1 = discharged, 0 = died, 2 = censored.
    pub fn code(self) -> u8 {
        match self {
            Outcome::Died => 0,
            Outcome::Discharged => 1,
            Outcome::Censored => 2,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code {
            c if c == 0.0 => Some(Outcome::Died),
            c if c == 1.0 => Some(Outcome::Discharged),
            c if c == 2.0 => Some(Outcome::Censored),
            _ => None,
        }
    }
}

/// One hospital encounter with raw, unevenly sampled observations.
///
/// `static_covariates` and `series` are aligned with the schema: static and
/// comorbidity features use the former, labs and vitals the latter. Absent
/// features are `None` / empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub hospital_id: String,
    pub static_covariates: Vec<Option<f64>>,
    pub series: Vec<Vec<Observation>>,
    /// Flow settings in L/min, each in force until the next one.
    pub oxygen_series: Vec<Observation>,
    pub outcome: Outcome,
    /// Hours since admission at discharge, death or censoring.
    pub event_time: f64,
}

impl PatientRecord {
    /// Checks the record invariants against `schema`.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), CohortError> {
        let bad = |reason: String| CohortError::InvalidRecord {
            patient: self.patient_id.clone(),
            reason,
        };
        if self.static_covariates.len() != schema.len() || self.series.len() != schema.len() {
            return Err(bad(format!(
                "feature vectors have length {}/{}, schema has {}",
                self.static_covariates.len(),
                self.series.len(),
                schema.len()
            )));
        }
        if !(self.event_time.is_finite() && self.event_time >= 0.0) {
            return Err(bad(format!("event_time {} is not a valid time", self.event_time)));
        }
        let mut last_time: f64 = 0.0;
        for (j, obs) in self.series.iter().enumerate() {
            check_series(obs).map_err(|reason| bad(format!("{}: {reason}", schema.names()[j])))?;
            if let Some(o) = obs.last() {
                last_time = last_time.max(o.time);
            }
        }
        check_series(&self.oxygen_series).map_err(|reason| bad(format!("oxygen_flow: {reason}")))?;
        for o in &self.oxygen_series {
            if !(0.0..=MAX_FLOW).contains(&o.value) {
                return Err(bad(format!("flow {} outside [0, {MAX_FLOW}]", o.value)));
            }
            last_time = last_time.max(o.time);
        }
        if self.event_time < last_time {
            return Err(bad(format!(
                "event_time {} precedes last observation at {last_time}",
                self.event_time
            )));
        }
        Ok(())
    }

    /// Static value by feature name, if the schema has it and it was observed.
    pub fn static_value(&self, schema: &FeatureSchema, name: &str) -> Option<f64> {
        schema
            .index_of(name)
            .and_then(|j| self.static_covariates.get(j).copied().flatten())
    }

    /// Whether the patient died within `hours` of admission.
    pub fn died_within(&self, hours: f64) -> bool {
        self.outcome == Outcome::Died && self.event_time <= hours
    }
}

fn check_series(obs: &[Observation]) -> Result<(), String> {
    let mut prev: Option<f64> = None;
    for o in obs {
        if !(o.time.is_finite() && o.time >= 0.0) {
            return Err(format!("time {} is negative or non-finite", o.time));
        }
        if !o.value.is_finite() {
            return Err(format!("value at time {} is not finite", o.time));
        }
        if let Some(p) = prev {
            if o.time <= p {
                return Err(format!("times not strictly increasing ({p} then {})", o.time));
            }
        }
        prev = Some(o.time);
    }
    Ok(())
}

/// One decision epoch on the resampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub time: f64,
    pub state: Vec<f64>,
    /// Flow in force at `time`, L/min.
    pub action: f64,
}

/// A record resampled onto a uniform grid; states contain no missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub patient_id: String,
    pub hospital_id: String,
    pub steps: Vec<Step>,
    pub terminal: Outcome,
    pub event_time: f64,
}

impl Trajectory {
    pub fn state_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.state.len())
    }
}

/// One MDP step `(s, a, r, s', terminal)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}
