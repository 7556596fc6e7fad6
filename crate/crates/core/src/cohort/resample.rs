//! Interpolation onto the decision grid and transition construction.

use serde::{Deserialize, Serialize};

use super::{
    CohortError, FeatureSchema, Observation, Outcome, PatientRecord, Step, Trajectory, Transition,
    DEATH_REWARD, DISCHARGE_REWARD, HOURS_PER_DAY,
};

/// Linear interpolation of `series` at each grid time.
///
/// Outside the observed range the nearest observation is held constant.
pub fn impute_linear(series: &[Observation], grid: &[f64]) -> Result<Vec<f64>, CohortError> {
    let (first, last) = match (series.first(), series.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(CohortError::EmptySeries),
    };
    Ok(grid
        .iter()
        .map(|&t| {
            if t <= first.time {
                return first.value;
            }
            if t >= last.time {
                return last.value;
            }
            // first index with time > t; 1 <= hi < len here
            let hi = series.partition_point(|o| o.time <= t);
            let (a, b) = (series[hi - 1], series[hi]);
            a.value + (b.value - a.value) * (t - a.time) / (b.time - a.time)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleOptions {
    /// Spacing of decision epochs in hours.
    pub interval_hours: f64,
    /// Per-feature raw values substituted when a patient never observed a
    /// feature (training-fold means). Without it such patients are errors.
    pub fallback: Option<Vec<f64>>,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self {
            interval_hours: 4.0,
            fallback: None,
        }
    }
}

/// Uniform decision grid `0, h, 2h, ...` up to and including `event_time`.
pub fn decision_grid(event_time: f64, interval_hours: f64) -> Vec<f64> {
    let n = (event_time / interval_hours + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * interval_hours).collect()
}

/// Resamples a record onto the uniform grid `[0, event_time]`.
///
/// Each lab/vital coordinate is [`impute_linear`] of its own series; static
/// features are constant. The action at a grid time is the last flow set at
/// or before it (0 before the first setting).
pub fn resample_trajectory(
    record: &PatientRecord,
    schema: &FeatureSchema,
    opts: &ResampleOptions,
) -> Result<Trajectory, CohortError> {
    if !(opts.interval_hours > 0.0) {
        return Err(CohortError::Config(format!(
            "interval_hours must be positive, got {}",
            opts.interval_hours
        )));
    }
    let grid = decision_grid(record.event_time, opts.interval_hours);
    let p = schema.len();
    let observed = (0..p)
        .filter(|&j| record.static_covariates[j].is_some() || !record.series[j].is_empty())
        .count();
    if observed == 0 {
        return Err(CohortError::UnusableRecord(record.patient_id.clone()));
    }

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let fallback = || {
            opts.fallback
                .as_ref()
                .map(|f| vec![f[j]; grid.len()])
                .ok_or_else(|| CohortError::MissingFeature {
                    patient: record.patient_id.clone(),
                    feature: schema.names()[j].clone(),
                })
        };
        let col = if schema.kind(j).is_time_invariant() {
            match record.static_covariates[j] {
                Some(v) => vec![v; grid.len()],
                None => fallback()?,
            }
        } else if record.series[j].is_empty() {
            fallback()?
        } else {
            impute_linear(&record.series[j], &grid)?
        };
        columns.push(col);
    }

    let steps = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let idx = record.oxygen_series.partition_point(|o| o.time <= t);
            let action = if idx == 0 {
                0.0
            } else {
                record.oxygen_series[idx - 1].value
            };
            Step {
                time: t,
                state: columns.iter().map(|c| c[k]).collect(),
                action,
            }
        })
        .collect();

    Ok(Trajectory {
        patient_id: record.patient_id.clone(),
        hospital_id: record.hospital_id.clone(),
        steps,
        terminal: record.outcome,
        event_time: record.event_time,
    })
}

/// How terminal rewards are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RewardScheme {
    /// +15 on discharge, −15 on death, 0 on censoring.
    #[default]
    Terminal,
    /// +15 if the patient is alive seven days after admission, −15 if they
    /// died within that window; censoring before day seven gives 0.
    SevenDay,
}

impl std::str::FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "terminal" => Ok(RewardScheme::Terminal),
            "seven_day" => Ok(RewardScheme::SevenDay),
            other => Err(format!("unknown reward scheme `{other}` (terminal | seven_day)")),
        }
    }
}

impl std::fmt::Display for RewardScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardScheme::Terminal => "terminal",
            RewardScheme::SevenDay => "seven_day",
        })
    }
}

fn terminal_reward(traj: &Trajectory, scheme: RewardScheme) -> f64 {
    match scheme {
        RewardScheme::Terminal => match traj.terminal {
            Outcome::Discharged => DISCHARGE_REWARD,
            Outcome::Died => DEATH_REWARD,
            Outcome::Censored => 0.0,
        },
        RewardScheme::SevenDay => {
            let window = 7.0 * HOURS_PER_DAY;
            match traj.terminal {
                Outcome::Died if traj.event_time <= window => DEATH_REWARD,
                Outcome::Censored if traj.event_time < window => 0.0,
                _ => DISCHARGE_REWARD,
            }
        }
    }
}

/// Compiles consecutive grid steps into transitions.
///
/// Every transition has reward 0 except the last, which is terminal, carries
/// the outcome reward and repeats its state as `next_state`.
pub fn build_transitions(
    traj: &Trajectory,
    scheme: RewardScheme,
) -> Result<Vec<Transition>, CohortError> {
    let n = traj.steps.len();
    if n == 0 {
        return Err(CohortError::EmptyTrajectory);
    }
    let mut out = Vec::with_capacity(n.max(2) - 1);
    for w in traj.steps.windows(2) {
        out.push(Transition {
            state: w[0].state.clone(),
            action: w[0].action,
            reward: 0.0,
            next_state: w[1].state.clone(),
            terminal: false,
        });
    }
    let reward = terminal_reward(traj, scheme);
    match out.last_mut() {
        Some(last) => {
            last.terminal = true;
            last.reward = reward;
            last.next_state = last.state.clone();
        }
        None => {
            let s = &traj.steps[0];
            out.push(Transition {
                state: s.state.clone(),
                action: s.action,
                reward,
                next_state: s.state.clone(),
                terminal: true,
            });
        }
    }
    Ok(out)
}
