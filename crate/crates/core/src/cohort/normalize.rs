//! Per-feature z-scoring with statistics from the training fold only.

use serde::{Deserialize, Serialize};

use super::{FeatureSchema, PatientRecord, Trajectory};

/// Per-coordinate mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FeatureStats {
    /// Fits statistics over every step state of `trajectories`.
    ///
    /// Zero-variance coordinates get SD 1 (with a warning) so they map to 0.
    pub fn fit(trajectories: &[Trajectory]) -> Self {
        let dim = trajectories.iter().map(Trajectory::state_dim).max().unwrap_or(0);
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        // Welford, one pass
        for s in trajectories.iter().flat_map(|t| &t.steps) {
            n += 1;
            for j in 0..dim {
                let d = s.state[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (s.state[j] - mean[j]);
            }
        }
        let sd = m2
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let var = if n > 1 { m / (n - 1) as f64 } else { 0.0 };
                let sd = var.sqrt();
                if sd > 1e-12 * (1.0 + mean[j].abs()) && sd.is_finite() {
                    sd
                } else {
                    log::warn!("state coordinate {j} has zero variance; using SD 1");
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        let mut out = traj.clone();
        for s in &mut out.steps {
            s.state = self.normalize(&s.state);
        }
        out
    }
}

/// Fits statistics on `trajectories` and returns them with the z-scored copies.
pub fn normalize_features(trajectories: &[Trajectory]) -> (Vec<Trajectory>, FeatureStats) {
    let stats = FeatureStats::fit(trajectories);
    let normalized = trajectories.iter().map(|t| stats.apply(t)).collect();
    (normalized, stats)
}

/// Mean raw value of every feature over all observations in `records`.
///
/// Used as the substitute for features a patient never had measured. A
/// feature with no observations at all gets 0.
pub fn raw_feature_means(records: &[PatientRecord], schema: &FeatureSchema) -> Vec<f64> {
    (0..schema.len())
        .map(|j| {
            let (sum, n) = records.iter().fold((0.0, 0usize), |(s, n), r| {
                if schema.kind(j).is_time_invariant() {
                    match r.static_covariates[j] {
                        Some(v) => (s + v, n + 1),
                        None => (s, n),
                    }
                } else {
                    let obs = &r.series[j];
                    (s + obs.iter().map(|o| o.value).sum::<f64>(), n + obs.len())
                }
            });
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Outcome, Step};
    use proptest::prelude::*;

    fn traj(states: Vec<Vec<f64>>) -> Trajectory {
        Trajectory {
            patient_id: "p".into(),
            hospital_id: "H1".into(),
            steps: states
                .into_iter()
                .enumerate()
                .map(|(k, state)| Step {
                    time: 4.0 * k as f64,
                    state,
                    action: 0.0,
                })
                .collect(),
            terminal: Outcome::Censored,
            event_time: 0.0,
        }
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let t = traj(vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 6.0]]);
        let (out, stats) = normalize_features(&[t]);
        assert_eq!(stats.sd[0], 1.0);
        assert!(out[0].steps.iter().all(|s| s.state[0] == 0.0));
        let col: Vec<f64> = out[0].steps.iter().map(|s| s.state[1]).collect();
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn validation_fold_keeps_training_stats() {
        let train = traj(vec![vec![0.0], vec![2.0]]);
        let stats = FeatureStats::fit(&[train]);
        let val = stats.apply(&traj(vec![vec![5.0], vec![7.0]]));
        let mean: f64 = val.steps.iter().map(|s| s.state[0]).sum::<f64>() / 2.0;
        assert!(mean > 1.0);
    }

    proptest! {
        #[test]
        fn normalize_inverts(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 2..20)
        ) {
            let t = traj(rows.clone());
            let stats = FeatureStats::fit(&[t]);
            for r in rows {
                let back = stats.denormalize(&stats.normalize(&r));
                for (a, b) in r.iter().zip(back) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }
        }
    }
}
