use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, DdpgError, LogRow, TrainingConfig, TrainingLog};
use crate::cohort::FeatureStats;
use crate::nn::Parameters;

const FORMAT: &str = "oxyrl-policy";
const VERSION: u32 = 1;

/// Which flows a checkpoint recommends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// The trained actor.
    Actor,
    /// Echo the logged flow at every decision point (null policy).
    Logged,
}

/// Both networks, their targets and optimizer state, the training config
/// and the normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub kind: PolicyKind,
    pub feature_names: Vec<String>,
    pub config: TrainingConfig,
    pub stats: FeatureStats,
    pub agent: Agent,
}

impl PolicyCheckpoint {
    pub fn new(
        kind: PolicyKind,
        feature_names: Vec<String>,
        config: TrainingConfig,
        stats: FeatureStats,
        agent: Agent,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            feature_names,
            config,
            stats,
            agent,
        }
    }

    pub fn to_json(&self) -> Result<String, DdpgError> {
        serde_json::to_string(self).map_err(|e| DdpgError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, DdpgError> {
        let ck: Self = serde_json::from_str(text).map_err(|e| DdpgError::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(DdpgError::Checkpoint(format!(
                "unsupported container {} v{} (expected {FORMAT} v{VERSION})",
                ck.format, ck.version
            )));
        }
        let d = ck.feature_names.len();
        let a = &ck.agent;
        for (name, dim) in [
            ("actor", a.actor.state_dim()),
            ("critic", a.critic.state_dim()),
            ("target actor", a.target_actor.state_dim()),
            ("target critic", a.target_critic.state_dim()),
            ("normalization stats", ck.stats.dim()),
        ] {
            if dim != d {
                return Err(DdpgError::Checkpoint(format!("{name} has dimension {dim}, schema has {d}")));
            }
        }
        for net in [&a.actor.net, &a.target_actor.net, &a.critic.state_branch, &a.critic.trunk] {
            net.validate()?;
        }
        if a.actor_opt.m.len() != a.actor.tensors().len() || a.critic_opt.m.len() != a.critic.tensors().len() {
            return Err(DdpgError::Checkpoint("optimizer state does not match the networks".into()));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<(), DdpgError> {
        std::fs::write(path, self.to_json()?).map_err(|source| DdpgError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, DdpgError> {
        let text = std::fs::read_to_string(path).map_err(|source| DdpgError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// `iteration,td_mse,consistency_mse`, consistency blank between
/// evaluations.
pub fn write_training_log(path: &Path, log: &TrainingLog) -> Result<(), DdpgError> {
    let mut out = String::from("iteration,td_mse,consistency_mse\n");
    for r in &log.rows {
        let _ = match r.consistency_mse {
            Some(c) => writeln!(out, "{},{},{}", r.iteration, r.td_mse, c),
            None => writeln!(out, "{},{},", r.iteration, r.td_mse),
        };
    }
    std::fs::write(path, out).map_err(|source| DdpgError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_training_log(path: &Path) -> Result<Vec<LogRow>, DdpgError> {
    let bad = |m: String| DdpgError::Checkpoint(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{e}: `{}`", &rec[i])));
        rows.push(LogRow {
            iteration: rec[0].parse().map_err(|e| bad(format!("{e}")))?,
            td_mse: num(1)?,
            consistency_mse: if rec[2].is_empty() { None } else { Some(num(2)?) },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpg::StopReason;

    #[test]
    fn round_trips_bit_exact() {
        let agent = Agent::new(4, 99).unwrap();
        let stats = FeatureStats {
            mean: vec![0.1, 1.0 / 3.0, -2.0, 7.0],
            sd: vec![1.0, 0.2, 3.0, 1e-3],
        };
        let names = ["a", "b", "c", "d"].map(String::from).to_vec();
        let ck = PolicyCheckpoint::new(PolicyKind::Actor, names, TrainingConfig::default(), stats, agent);
        let back = PolicyCheckpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), ck.to_json().unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let agent = Agent::new(3, 1).unwrap();
        let stats = FeatureStats {
            mean: vec![0.0; 3],
            sd: vec![1.0; 3],
        };
        let ck = PolicyCheckpoint::new(PolicyKind::Actor, vec!["x".into()], TrainingConfig::default(), stats, agent);
        assert!(PolicyCheckpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn log_csv_blanks_non_evaluation_rows() {
        let dir = std::env::temp_dir().join(format!("oxyrl-log-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.csv");
        let log = TrainingLog {
            rows: vec![
                LogRow { iteration: 1, td_mse: 2.5, consistency_mse: None },
                LogRow { iteration: 2, td_mse: 0.1, consistency_mse: Some(40.0) },
            ],
            stop_reason: StopReason::MaxIterations,
            iterations: 2,
            best_consistency: Some(40.0),
        };
        write_training_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "iteration,td_mse,consistency_mse\n1,2.5,\n2,0.1,40\n");
        assert_eq!(read_training_log(&path).unwrap(), log.rows);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
