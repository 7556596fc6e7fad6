//! Leave-one-hospital-out evaluation of a learned dosing policy.
//!
//! Each fold trains the policy and a Cox outcome model on three hospitals and
//! scores every patient of the fourth. A decision point's Cox covariates are
//! its normalized state plus the standardized flow rate, so the same model
//! estimates 7-day mortality under the logged flows and under the policy's
//! recommendations. [`build_report`] pools the folds.

mod figures;
mod output;
mod report;

pub use figures::{curve_svg, histogram_svg};
pub use output::{summary_text, write_folds_csv, write_patients_csv, write_report};
pub use report::{
    bootstrap_comparison, build_report, consistency_rate, difference_curve, flow_histograms, subgroup_table, Comparison,
    CurveBin, EvalReport, FoldSummary, Histogram, MetricBlock, SubgroupRow,
};

use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{
    build_transitions, hospital_labels, raw_feature_means, resample_trajectory, split_by_hospital, CohortError,
    FeatureKind, FeatureSchema, FeatureStats, Fold, Outcome, PatientRecord, ResampleOptions, Trajectory, Transition,
    HOURS_PER_DAY,
};
use crate::ddpg::{self, Agent, DdpgError, PolicyCheckpoint, PolicyKind, ReplayMemory, TrainingConfig, TrainingLog};
use crate::kv::{KeyValues, KvError};
use crate::par;
use crate::survival::{
    concordance_index, fit_cox, grid_search, prune_correlated, CoxModel, ElasticNetGrid, GridRow, SurvivalError,
    SurvivalSample, MORTALITY_HORIZON_DAYS,
};

/// Name of the flow coordinate in Cox models.
pub const FLOW_FEATURE: &str = "oxygen_flow";

/// Number of hospitals a LOHO run requires.
pub const REQUIRED_HOSPITALS: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Ddpg(#[from] DdpgError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error("fold {hospital}: {source}")]
    Fold {
        hospital: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("invalid evaluation options: {0}")]
    Options(String),
    #[error("no patients to evaluate")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bootstrap_samples: usize,
    pub bootstrap_seed: u64,
    /// |recommended − logged| strictly below this is consistent, L/min.
    pub consistency_threshold: f64,
    pub curve_bin_width: f64,
    /// Curve bins with fewer patients are flagged low-support.
    pub min_bin_count: usize,
    pub histogram_bin_width: f64,
    /// Predicted 7-day mortality at or above this is a predicted death.
    pub label_threshold: f64,
    pub significance_level: f64,
    pub prune_threshold: f64,
    /// Share of training patients held out to score the penalty grid.
    pub validation_fraction: f64,
    pub grid: ElasticNetGrid,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bootstrap_samples: 1000,
            bootstrap_seed: 1,
            consistency_threshold: 10.0,
            curve_bin_width: 5.0,
            min_bin_count: 10,
            histogram_bin_width: 5.0,
            label_threshold: 0.5,
            significance_level: 0.001,
            prune_threshold: 0.7,
            validation_fraction: 0.2,
            grid: ElasticNetGrid::default(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Options(m));
        if self.bootstrap_samples == 0 {
            return bad("bootstrap_samples must be positive".into());
        }
        if !(self.consistency_threshold > 0.0) {
            return bad("consistency_threshold must be positive".into());
        }
        if !(self.curve_bin_width > 0.0 && self.histogram_bin_width > 0.0) {
            return bad("bin widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.label_threshold) {
            return bad(format!("label_threshold must lie in [0,1], got {}", self.label_threshold));
        }
        if !(self.significance_level > 0.0 && self.significance_level < 1.0) {
            return bad(format!("significance_level must lie in (0,1), got {}", self.significance_level));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold <= 1.0) {
            return bad(format!("prune_threshold must lie in (0,1], got {}", self.prune_threshold));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction must lie in (0,1), got {}", self.validation_fraction));
        }
        let penalties = self.grid.l1_values.iter().chain(&self.grid.l2_values);
        if self.grid.pairs().is_empty() || penalties.clone().any(|v| !(*v >= 0.0)) {
            return bad("penalty grid must be non-empty and non-negative".into());
        }
        Ok(())
    }

    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self, KvError> {
        let mut o = Self::default();
        macro_rules! take {
            ($key:literal => $field:expr) => {
                if let Some(v) = kv.take($key)? {
                    $field = v;
                }
            };
        }
        take!("bootstrap_samples" => o.bootstrap_samples);
        take!("bootstrap_seed" => o.bootstrap_seed);
        take!("consistency_threshold" => o.consistency_threshold);
        take!("curve_bin_width" => o.curve_bin_width);
        take!("min_bin_count" => o.min_bin_count);
        take!("histogram_bin_width" => o.histogram_bin_width);
        take!("label_threshold" => o.label_threshold);
        take!("significance_level" => o.significance_level);
        take!("prune_threshold" => o.prune_threshold);
        take!("validation_fraction" => o.validation_fraction);
        if let Some(v) = kv.take_list("l1_values")? {
            o.grid.l1_values = v;
        }
        if let Some(v) = kv.take_list("l2_values")? {
            o.grid.l2_values = v;
        }
        Ok(o)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut kv = KeyValues::new();
        kv.set("bootstrap_samples", self.bootstrap_samples);
        kv.set("bootstrap_seed", self.bootstrap_seed);
        kv.set("consistency_threshold", self.consistency_threshold);
        kv.set("curve_bin_width", self.curve_bin_width);
        kv.set("min_bin_count", self.min_bin_count);
        kv.set("histogram_bin_width", self.histogram_bin_width);
        kv.set("label_threshold", self.label_threshold);
        kv.set("significance_level", self.significance_level);
        kv.set("prune_threshold", self.prune_threshold);
        kv.set("validation_fraction", self.validation_fraction);
        kv.set("l1_values", list(&self.grid.l1_values));
        kv.set("l2_values", list(&self.grid.l2_values));
        kv
    }
}

/// How Cox covariates are assembled from a normalized state and a flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxDesign {
    pub flow_mean: f64,
    pub flow_sd: f64,
    /// Retained coordinates of `[flow, state...]`; always starts with 0.
    pub columns: Vec<usize>,
    pub names: Vec<String>,
}

impl CoxDesign {
    pub fn covariates(&self, state: &[f64], flow: f64) -> Vec<f64> {
        self.columns
            .iter()
            .map(|&c| if c == 0 { (flow - self.flow_mean) / self.flow_sd } else { state[c - 1] })
            .collect()
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        serde_json::to_string_pretty(self).map_err(|e| EvalError::Precondition(e.to_string()))
    }
}

/// The outcome model of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub design: CoxDesign,
    pub cox: CoxModel,
    pub grid: Vec<GridRow>,
}

impl OutcomeModel {
    pub fn mortality7(&self, state: &[f64], flow: f64) -> f64 {
        self.cox.predict_mortality7(&self.design.covariates(state, flow))
    }

    /// Mean 7-day mortality over a patient's decision points.
    pub fn patient_mortality(&self, states: &[&[f64]], flows: &[f64]) -> f64 {
        let total: f64 = states.iter().zip(flows).map(|(s, &a)| self.mortality7(s, a)).sum();
        total / flows.len() as f64
    }
}

/// Grid steps that act as decision points: every step that starts a
/// transition (all but the last, or the only one).
pub fn decision_steps(traj: &Trajectory) -> &[crate::cohort::Step] {
    let n = traj.steps.len();
    &traj.steps[..n.saturating_sub(1).max(n.min(1))]
}

/// Landmark survival samples: one per decision point, covariates at that
/// point, follow-up measured from it.
pub fn landmark_samples(trajs: &[Trajectory], design: &CoxDesign) -> Vec<SurvivalSample> {
    trajs
        .iter()
        .flat_map(|t| {
            decision_steps(t).iter().map(move |s| {
                SurvivalSample::new(
                    design.covariates(&s.state, s.action),
                    (t.event_time - s.time) / HOURS_PER_DAY,
                    t.terminal == Outcome::Died,
                )
            })
        })
        .collect()
}

/// Prunes correlated coordinates (flow first, so it is always kept), then
/// selects the penalty pair on a patient-level validation split and refits
/// on every training patient.
pub fn fit_outcome_model(
    trajs: &[Trajectory],
    feature_names: &[String],
    options: &EvalOptions,
) -> Result<OutcomeModel, EvalError> {
    let flows: Vec<f64> = trajs.iter().flat_map(|t| decision_steps(t).iter().map(|s| s.action)).collect();
    if flows.len() < 2 {
        return Err(EvalError::Precondition("outcome model needs at least two decision points".into()));
    }
    let n = flows.len() as f64;
    let flow_mean = flows.iter().sum::<f64>() / n;
    let var = flows.iter().map(|a| (a - flow_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let flow_sd = if var > 0.0 { var.sqrt() } else { 1.0 };

    let all_names: Vec<String> = std::iter::once(FLOW_FEATURE.to_string()).chain(feature_names.iter().cloned()).collect();
    let full = CoxDesign {
        flow_mean,
        flow_sd,
        columns: (0..all_names.len()).collect(),
        names: all_names.clone(),
    };
    let rows = landmark_samples(trajs, &full);
    let data = Array2::from_shape_fn((rows.len(), all_names.len()), |(i, j)| rows[i].covariates[j]);
    let kept = prune_correlated(&data, &all_names, options.prune_threshold)?;
    let columns: Vec<usize> = kept.iter().map(|k| all_names.iter().position(|n| n == k).expect("kept name")).collect();
    let design = CoxDesign {
        flow_mean,
        flow_sd,
        columns,
        names: kept,
    };

    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(options.bootstrap_seed));
    let n_val = ((trajs.len() as f64 * options.validation_fraction).round() as usize).clamp(1, trajs.len() - 1);
    let mut val_mask = vec![false; trajs.len()];
    for &i in &order[..n_val] {
        val_mask[i] = true;
    }
    let pick = |val: bool| -> Vec<Trajectory> {
        trajs.iter().zip(&val_mask).filter(|(_, m)| **m == val).map(|(t, _)| t.clone()).collect()
    };
    let train = landmark_samples(&pick(false), &design);
    let val = landmark_samples(&pick(true), &design);
    let search = grid_search(&train, &val, &options.grid)?;
    let cox = fit_cox(&landmark_samples(trajs, &design), search.l1, search.l2)?
        .with_feature_names(design.names.clone())?;
    Ok(OutcomeModel {
        design,
        cox,
        grid: search.rows,
    })
}

/// Per-patient evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResult {
    pub patient_id: String,
    pub hospital_id: String,
    pub logged: Vec<f64>,
    pub recommended: Vec<f64>,
    pub mortality_rl: f64,
    pub mortality_logged: f64,
    /// Died within 7 days of admission.
    pub died_7d: bool,
    pub groups: Vec<String>,
}

impl PatientResult {
    pub fn mean_logged(&self) -> f64 {
        mean(&self.logged)
    }

    pub fn mean_recommended(&self) -> f64 {
        mean(&self.recommended)
    }

    /// Mean of recommended − logged over the decision points.
    pub fn mean_difference(&self) -> f64 {
        let d: f64 = self.recommended.iter().zip(&self.logged).map(|(r, l)| r - l).sum();
        d / self.logged.len() as f64
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// A subgroup definition over raw static covariates.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupRule {
    All,
    Indicator { feature: String, value: bool },
    /// lo ≤ x < hi.
    Band { feature: String, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subgroup {
    pub name: String,
    pub rule: GroupRule,
}

impl Subgroup {
    pub fn contains(&self, record: &PatientRecord, schema: &FeatureSchema) -> bool {
        match &self.rule {
            GroupRule::All => true,
            GroupRule::Indicator { feature, value } => {
                record.static_value(schema, feature).is_some_and(|v| (v != 0.0) == *value)
            }
            GroupRule::Band { feature, lo, hi } => {
                record.static_value(schema, feature).is_some_and(|v| v >= *lo && v < *hi)
            }
        }
    }
}

/// Rows of the subgroup table that `schema` supports: everyone, sex, age
/// bands, BMI bands and one row per comorbidity.
pub fn subgroups(schema: &FeatureSchema) -> Vec<Subgroup> {
    let mut out = vec![Subgroup {
        name: "All patients".into(),
        rule: GroupRule::All,
    }];
    let has = |f: &str| schema.index_of(f).is_some();
    if has("male") {
        for (name, value) in [("Male", true), ("Female", false)] {
            out.push(Subgroup {
                name: name.into(),
                rule: GroupRule::Indicator {
                    feature: "male".into(),
                    value,
                },
            });
        }
    }
    let bands = |feature: &str, unit: &str, edges: &[(f64, f64)], out: &mut Vec<Subgroup>| {
        for &(lo, hi) in edges {
            let name = if hi.is_infinite() {
                format!("{feature} >= {lo} {unit}")
            } else {
                format!("{feature} {lo}-{hi} {unit}")
            };
            out.push(Subgroup {
                name: name.trim_end().into(),
                rule: GroupRule::Band {
                    feature: feature.into(),
                    lo,
                    hi,
                },
            });
        }
    };
    if has("age") {
        bands("age", "", &[(50.0, 65.0), (65.0, 75.0), (75.0, 80.0), (80.0, f64::INFINITY)], &mut out);
    }
    if has("bmi") {
        bands(
            "bmi",
            "",
            &[(0.0, 18.5), (18.5, 25.0), (25.0, 30.0), (30.0, 40.0), (40.0, f64::INFINITY)],
            &mut out,
        );
    }
    for (j, name) in schema.names().iter().enumerate() {
        if schema.kind(j) == FeatureKind::Comorbidity {
            out.push(Subgroup {
                name: name.clone(),
                rule: GroupRule::Indicator {
                    feature: name.clone(),
                    value: true,
                },
            });
        }
    }
    out
}

/// Everything a trained fold produced.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub hospital: String,
    pub train_patients: Vec<String>,
    pub policy: PolicyCheckpoint,
    pub training_log: Option<TrainingLog>,
    pub outcome: OutcomeModel,
    pub patients: Vec<PatientResult>,
    /// Concordance of the outcome model on the test landmarks (logged flows).
    pub concordance: Option<f64>,
}

/// Resampled and normalized trajectories of `records`.
pub fn prepare(
    records: &[&PatientRecord],
    schema: &FeatureSchema,
    stats: &FeatureStats,
    interval_hours: f64,
) -> Result<Vec<Trajectory>, EvalError> {
    // a feature the patient never had becomes the training mean, i.e. 0 after scaling
    let opts = ResampleOptions {
        interval_hours,
        fallback: Some(stats.mean.clone()),
    };
    let out: Vec<Result<Trajectory, CohortError>> =
        par::map(records, |r| resample_trajectory(r, schema, &opts).map(|t| stats.apply(&t)));
    Ok(out.into_iter().collect::<Result<_, _>>()?)
}

/// Trains a policy on `records`: training-set fallbacks and statistics,
/// terminal transitions, DDPG.
pub fn train_policy(
    records: &[&PatientRecord],
    schema: &FeatureSchema,
    config: &TrainingConfig,
) -> Result<(PolicyCheckpoint, TrainingLog, Vec<Trajectory>), EvalError> {
    let owned: Vec<PatientRecord> = records.iter().map(|r| (*r).clone()).collect();
    let opts = ResampleOptions {
        interval_hours: config.interval_hours,
        fallback: Some(raw_feature_means(&owned, schema)),
    };
    let raw: Vec<Result<Trajectory, CohortError>> = par::map(records, |r| resample_trajectory(r, schema, &opts));
    let raw: Vec<Trajectory> = raw.into_iter().collect::<Result<_, _>>()?;
    let stats = FeatureStats::fit(&raw);
    let trajs: Vec<Trajectory> = raw.iter().map(|t| stats.apply(t)).collect();
    let mut transitions: Vec<Transition> = Vec::new();
    for t in &trajs {
        transitions.extend(build_transitions(t, config.reward_scheme)?);
    }
    let memory = ReplayMemory::new(&transitions)?;
    let (agent, log) = ddpg::train(&memory, config)?;
    let ck = PolicyCheckpoint::new(PolicyKind::Actor, schema.names().to_vec(), config.clone(), stats, agent);
    Ok((ck, log, trajs))
}

/// A checkpoint that echoes logged flows (the null policy).
pub fn null_policy(
    records: &[&PatientRecord],
    schema: &FeatureSchema,
    config: &TrainingConfig,
) -> Result<(PolicyCheckpoint, Vec<Trajectory>), EvalError> {
    let owned: Vec<PatientRecord> = records.iter().map(|r| (*r).clone()).collect();
    let opts = ResampleOptions {
        interval_hours: config.interval_hours,
        fallback: Some(raw_feature_means(&owned, schema)),
    };
    let raw: Vec<Result<Trajectory, CohortError>> = par::map(records, |r| resample_trajectory(r, schema, &opts));
    let raw: Vec<Trajectory> = raw.into_iter().collect::<Result<_, _>>()?;
    let stats = FeatureStats::fit(&raw);
    let trajs = raw.iter().map(|t| stats.apply(t)).collect();
    let agent = Agent::new(schema.len(), config.seed)?;
    let ck = PolicyCheckpoint::new(PolicyKind::Logged, schema.names().to_vec(), config.clone(), stats, agent);
    Ok((ck, trajs))
}

/// Flows `policy` recommends at each step of a normalized trajectory.
pub fn recommendations(policy: &PolicyCheckpoint, steps: &[crate::cohort::Step]) -> Result<Vec<f64>, EvalError> {
    match policy.kind {
        PolicyKind::Logged => Ok(steps.iter().map(|s| s.action).collect()),
        PolicyKind::Actor => {
            let d = policy.stats.dim();
            let x = Array2::from_shape_fn((steps.len(), d), |(i, j)| steps[i].state[j]);
            Ok(policy.agent.actor.infer(&x).map_err(DdpgError::from)?)
        }
    }
}

/// Scores every patient of `records` under the policy and the logged flows.
pub fn evaluate_patients(
    records: &[&PatientRecord],
    trajs: &[Trajectory],
    schema: &FeatureSchema,
    policy: &PolicyCheckpoint,
    outcome: &OutcomeModel,
) -> Result<Vec<PatientResult>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    if policy.feature_names != schema.names() {
        return Err(EvalError::Precondition("checkpoint features differ from the cohort schema".into()));
    }
    let groups = subgroups(schema);
    let pairs: Vec<(&PatientRecord, &Trajectory)> = records.iter().copied().zip(trajs).collect();
    let results: Vec<Result<PatientResult, EvalError>> = par::map(&pairs, |&(r, t)| {
        let steps = decision_steps(t);
        let states: Vec<&[f64]> = steps.iter().map(|s| s.state.as_slice()).collect();
        let logged: Vec<f64> = steps.iter().map(|s| s.action).collect();
        let recommended = recommendations(policy, steps)?;
        Ok(PatientResult {
            patient_id: r.patient_id.clone(),
            hospital_id: r.hospital_id.clone(),
            mortality_rl: outcome.patient_mortality(&states, &recommended),
            mortality_logged: outcome.patient_mortality(&states, &logged),
            logged,
            recommended,
            died_7d: r.died_within(MORTALITY_HORIZON_DAYS * HOURS_PER_DAY),
            groups: groups.iter().filter(|g| g.contains(r, schema)).map(|g| g.name.clone()).collect(),
        })
    });
    results.into_iter().collect()
}

/// Concordance of the outcome model on landmarks built with logged flows;
/// `None` without comparable pairs.
pub fn test_concordance(outcome: &OutcomeModel, trajs: &[Trajectory]) -> Option<f64> {
    concordance_index(&outcome.cox, &landmark_samples(trajs, &outcome.design)).ok()
}

/// Trains and evaluates one fold. With `null` the policy echoes logged flows.
pub fn run_fold(
    records: &[PatientRecord],
    schema: &FeatureSchema,
    fold: &Fold,
    config: &TrainingConfig,
    options: &EvalOptions,
    null: bool,
) -> Result<FoldResult, EvalError> {
    let wrap = |e: EvalError| EvalError::Fold {
        hospital: fold.hospital.clone(),
        source: Box::new(e),
    };
    let train: Vec<&PatientRecord> = fold.train.iter().map(|&i| &records[i]).collect();
    let test: Vec<&PatientRecord> = fold.test.iter().map(|&i| &records[i]).collect();
    if test.is_empty() || train.is_empty() {
        return Err(wrap(EvalError::Empty));
    }
    let run = || -> Result<FoldResult, EvalError> {
        let (policy, log, train_trajs) = if null {
            let (ck, trajs) = null_policy(&train, schema, config)?;
            (ck, None, trajs)
        } else {
            let (ck, log, trajs) = train_policy(&train, schema, config)?;
            (ck, Some(log), trajs)
        };
        let outcome = fit_outcome_model(&train_trajs, schema.names(), options)?;
        let test_trajs = prepare(&test, schema, &policy.stats, config.interval_hours)?;
        let patients = evaluate_patients(&test, &test_trajs, schema, &policy, &outcome)?;
        Ok(FoldResult {
            hospital: fold.hospital.clone(),
            train_patients: train.iter().map(|r| r.patient_id.clone()).collect(),
            concordance: test_concordance(&outcome, &test_trajs),
            policy,
            training_log: log,
            outcome,
            patients,
        })
    };
    run().map_err(wrap)
}

/// Leave-one-hospital-out folds in order of first hospital appearance.
pub fn loho_folds(records: &[PatientRecord]) -> Result<Vec<Fold>, EvalError> {
    let labels = hospital_labels(records);
    if labels.len() != REQUIRED_HOSPITALS {
        return Err(EvalError::Precondition(format!(
            "leave-one-hospital-out needs exactly {REQUIRED_HOSPITALS} hospitals, found {} ({})",
            labels.len(),
            labels.join(", ")
        )));
    }
    Ok(split_by_hospital(records, &labels)?)
}

/// Runs every fold. With `parallel_folds` the folds run concurrently; the
/// results are identical either way.
pub fn loho_cross_validate(
    records: &[PatientRecord],
    schema: &FeatureSchema,
    config: &TrainingConfig,
    options: &EvalOptions,
    parallel_folds: bool,
) -> Result<Vec<FoldResult>, EvalError> {
    options.validate()?;
    config.validate()?;
    let folds = loho_folds(records)?;
    let results: Vec<Result<FoldResult, EvalError>> = if parallel_folds {
        par::map(&folds, |f| run_fold(records, schema, f, config, options, false))
    } else {
        let mut out = Vec::new();
        for f in &folds {
            let r = run_fold(records, schema, f, config, options, false);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    };
    results.into_iter().collect()
}
