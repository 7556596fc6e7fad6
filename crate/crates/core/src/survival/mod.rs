//! Cox proportional hazards with an elastic-net penalty.
//!
//! Fitting maximizes the Breslow partial log-likelihood (averaged over
//! samples) minus `l1·‖β‖₁ + (l2/2)·‖β‖₂²` by monotone accelerated proximal
//! gradient. The baseline cumulative hazard is the Breslow estimator, and
//! 7-day mortality is `1 − exp(−Λ0(7)·exp(sᵀβ))`.

mod fit;
mod metrics;
mod select;

pub use fit::{fit_cox, fit_cox_traced, partial_log_likelihood, penalized_objective, FitOptions};
pub use metrics::{
    concordance_counts, concordance_from_scores, concordance_index, cosine_similarity, paired_binary_test,
    ConcordanceCounts,
};
pub use select::{grid_search, prune_correlated, write_grid_report, ElasticNetGrid, GridRow, GridSearch};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FORMAT: &str = "oxyrl-cox";
const VERSION: u32 = 1;

/// Horizon, in days, of [`CoxModel::predict_mortality7`].
pub const MORTALITY_HORIZON_DAYS: f64 = 7.0;

#[derive(Debug, Error)]
pub enum SurvivalError {
    #[error("no events among {0} samples")]
    NoEvents(usize),
    #[error("no samples")]
    Empty,
    #[error("sample {index}: {message}")]
    InvalidSample { index: usize, message: String },
    #[error("covariate dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("cosine similarity is undefined for a zero vector")]
    UndefinedSimilarity,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("grid search: {0}")]
    Grid(String),
    #[error("model file: {0}")]
    Model(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One subject: covariates (flow rate among them), follow-up in days and
/// whether the follow-up ended in death.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    pub covariates: Vec<f64>,
    pub duration: f64,
    pub event: bool,
}

impl SurvivalSample {
    pub fn new(covariates: Vec<f64>, duration: f64, event: bool) -> Self {
        Self {
            covariates,
            duration,
            event,
        }
    }
}

pub(crate) fn check_samples(samples: &[SurvivalSample]) -> Result<usize, SurvivalError> {
    let p = samples.first().ok_or(SurvivalError::Empty)?.covariates.len();
    for (index, s) in samples.iter().enumerate() {
        if s.covariates.len() != p {
            return Err(SurvivalError::Dimension {
                expected: p,
                got: s.covariates.len(),
            });
        }
        if !(s.duration >= 0.0 && s.duration.is_finite()) {
            return Err(SurvivalError::InvalidSample {
                index,
                message: format!("duration {} is not a finite non-negative number", s.duration),
            });
        }
        if let Some(v) = s.covariates.iter().find(|v| !v.is_finite()) {
            return Err(SurvivalError::InvalidSample {
                index,
                message: format!("non-finite covariate {v}"),
            });
        }
    }
    Ok(p)
}

/// S(t | s) with a flag set when `t` lies past the last baseline step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalPrediction {
    pub probability: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub feature_names: Vec<String>,
    pub beta: Vec<f64>,
    /// (time, Λ0(time)) from (0, 0) through every distinct event time.
    pub baseline_cumhaz: Vec<(f64, f64)>,
    pub converged: bool,
    pub iterations: usize,
    pub l1: f64,
    pub l2: f64,
}

impl CoxModel {
    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self, SurvivalError> {
        if names.len() != self.beta.len() {
            return Err(SurvivalError::Dimension {
                expected: self.beta.len(),
                got: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn linear_predictor(&self, s: &[f64]) -> f64 {
        self.beta.iter().zip(s).map(|(b, x)| b * x).sum()
    }

    /// Right-continuous Λ0(t); Λ0(0) = 0.
    pub fn baseline_at(&self, t: f64) -> (f64, bool) {
        let last = self.baseline_cumhaz.last().map_or(0.0, |p| p.0);
        if t <= 0.0 {
            return (0.0, false);
        }
        let k = self.baseline_cumhaz.partition_point(|&(time, _)| time <= t);
        let value = if k == 0 { 0.0 } else { self.baseline_cumhaz[k - 1].1 };
        (value, t > last)
    }

    pub fn predict_survival(&self, s: &[f64], t: f64) -> SurvivalPrediction {
        let (cumhaz, extrapolated) = self.baseline_at(t);
        let probability = if cumhaz == 0.0 {
            1.0
        } else {
            (-cumhaz * self.linear_predictor(s).exp()).exp()
        };
        SurvivalPrediction {
            probability,
            extrapolated,
        }
    }

    pub fn predict_mortality7(&self, s: &[f64]) -> f64 {
        1.0 - self.predict_survival(s, MORTALITY_HORIZON_DAYS).probability
    }

    pub fn to_json(&self) -> Result<String, SurvivalError> {
        #[derive(Serialize)]
        struct File<'a> {
            format: &'a str,
            version: u32,
            #[serde(flatten)]
            model: &'a CoxModel,
        }
        serde_json::to_string_pretty(&File {
            format: FORMAT,
            version: VERSION,
            model: self,
        })
        .map_err(|e| SurvivalError::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, SurvivalError> {
        #[derive(Deserialize)]
        struct File {
            format: String,
            version: u32,
            #[serde(flatten)]
            model: CoxModel,
        }
        let f: File = serde_json::from_str(text).map_err(|e| SurvivalError::Model(e.to_string()))?;
        if f.format != FORMAT || f.version != VERSION {
            return Err(SurvivalError::Model(format!(
                "unsupported container {} v{} (expected {FORMAT} v{VERSION})",
                f.format, f.version
            )));
        }
        let m = f.model;
        if m.beta.len() != m.feature_names.len() {
            return Err(SurvivalError::Model(format!(
                "{} coefficients for {} features",
                m.beta.len(),
                m.feature_names.len()
            )));
        }
        if m.baseline_cumhaz.first() != Some(&(0.0, 0.0)) || m.baseline_cumhaz.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(SurvivalError::Model(
                "baseline must start at (0, 0) and be non-decreasing".into(),
            ));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), SurvivalError> {
        std::fs::write(path, self.to_json()?).map_err(|source| SurvivalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, SurvivalError> {
        let text = std::fs::read_to_string(path).map_err(|source| SurvivalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
