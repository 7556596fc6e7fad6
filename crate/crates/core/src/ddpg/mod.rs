//! Offline deep deterministic policy gradient.
//!
//! The replay memory is a fixed set of logged transitions. Each iteration
//! samples a minibatch, regresses the critic on TD targets from the target
//! networks, takes one policy-gradient ascent step for the actor, and moves
//! both target networks toward the online ones.

mod checkpoint;
mod nets;

pub use checkpoint::{read_training_log, write_training_log, PolicyCheckpoint, PolicyKind};
pub use nets::{scale_action, ActionCritic, ActorCache, ActorNet, CriticCache, CriticNet};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{RewardScheme, Transition};
use crate::kv::{KeyValues, KvError};
use crate::nn::{apply_update, polyak_update, GradientSet, NnError, OptimizerState};

#[derive(Debug, Error)]
pub enum DdpgError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("replay memory is empty")]
    EmptyMemory,
    #[error("transitions have inconsistent state dimensions ({expected} vs {got})")]
    StateDim { expected: usize, got: usize },
    #[error("iteration {iteration}: non-finite {what}")]
    NonFinite { iteration: usize, what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub lr_critic: f64,
    pub lr_actor: f64,
    /// Polyak coefficient: target ← ρ·target + (1−ρ)·online.
    pub rho: f64,
    pub max_iterations: usize,
    /// Stop when the consistency metric has not improved for this many
    /// iterations; 0 disables early stopping.
    pub early_stop_window: usize,
    /// Consistency metric cadence K.
    pub consistency_every: usize,
    pub seed: u64,
    /// Decision grid spacing used to build transitions.
    pub interval_hours: f64,
    pub reward_scheme: RewardScheme,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 64,
            lr_critic: 0.002,
            lr_actor: 0.002,
            rho: 0.995,
            max_iterations: 20_000,
            early_stop_window: 500,
            consistency_every: 50,
            seed: 7,
            interval_hours: 4.0,
            reward_scheme: RewardScheme::Terminal,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), DdpgError> {
        let bad = |m: String| Err(DdpgError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0,1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0,1], got {}", self.rho));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr_critic > 0.0 && self.lr_actor > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.consistency_every == 0 {
            return bad("consistency_every must be positive".into());
        }
        if !(self.interval_hours > 0.0) {
            return bad("interval_hours must be positive".into());
        }
        Ok(())
    }

    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self, KvError> {
        let mut c = Self::default();
        macro_rules! take {
            ($key:literal => $field:expr) => {
                if let Some(v) = kv.take($key)? {
                    $field = v;
                }
            };
        }
        take!("gamma" => c.gamma);
        take!("batch_size" => c.batch_size);
        take!("lr_critic" => c.lr_critic);
        take!("lr_actor" => c.lr_actor);
        take!("rho" => c.rho);
        take!("max_iterations" => c.max_iterations);
        take!("early_stop_window" => c.early_stop_window);
        take!("consistency_every" => c.consistency_every);
        take!("seed" => c.seed);
        take!("interval_hours" => c.interval_hours);
        take!("reward_scheme" => c.reward_scheme);
        Ok(c)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("gamma", self.gamma);
        kv.set("batch_size", self.batch_size);
        kv.set("lr_critic", self.lr_critic);
        kv.set("lr_actor", self.lr_actor);
        kv.set("rho", self.rho);
        kv.set("max_iterations", self.max_iterations);
        kv.set("early_stop_window", self.early_stop_window);
        kv.set("consistency_every", self.consistency_every);
        kv.set("seed", self.seed);
        kv.set("interval_hours", self.interval_hours);
        kv.set("reward_scheme", self.reward_scheme);
        kv
    }
}

/// Immutable logged experience in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    pub states: Array2<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminal: Vec<bool>,
}

impl ReplayMemory {
    pub fn new(transitions: &[Transition]) -> Result<Self, DdpgError> {
        let first = transitions.first().ok_or(DdpgError::EmptyMemory)?;
        let d = first.state.len();
        let n = transitions.len();
        let mut states = Vec::with_capacity(n * d);
        let mut next_states = Vec::with_capacity(n * d);
        for t in transitions {
            for v in [&t.state, &t.next_state] {
                if v.len() != d {
                    return Err(DdpgError::StateDim {
                        expected: d,
                        got: v.len(),
                    });
                }
            }
            states.extend_from_slice(&t.state);
            next_states.extend_from_slice(&t.next_state);
        }
        Ok(Self {
            states: Array2::from_shape_vec((n, d), states).expect("n×d"),
            actions: transitions.iter().map(|t| t.action).collect(),
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_states: Array2::from_shape_vec((n, d), next_states).expect("n×d"),
            terminal: transitions.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    /// Rows `idx` as a standalone minibatch.
    pub fn batch(&self, idx: &[usize]) -> ReplayMemory {
        ReplayMemory {
            states: self.states.select(ndarray::Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: self.next_states.select(ndarray::Axis(0), idx),
            terminal: idx.iter().map(|&i| self.terminal[i]).collect(),
        }
    }
}

/// Online and target networks plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub target_actor: ActorNet,
    pub target_critic: CriticNet,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
}

impl Agent {
    /// Fresh networks; targets start as exact copies.
    pub fn new(state_dim: usize, seed: u64) -> Result<Self, DdpgError> {
        let actor = ActorNet::new(state_dim, seed)?;
        let critic = CriticNet::new(state_dim, seed.wrapping_add(1))?;
        Ok(Self {
            actor_opt: OptimizerState::new(&actor),
            critic_opt: OptimizerState::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }
}

/// r + γ·Q̃(s', π̃(s')) for non-terminal rows and r for terminal rows, with
/// both target networks in Infer mode.
pub fn td_target(
    batch: &ReplayMemory,
    target_actor: &ActorNet,
    target_critic: &CriticNet,
    gamma: f64,
) -> Result<Vec<f64>, DdpgError> {
    let next_actions = target_actor.infer(&batch.next_states)?;
    let next_q = target_critic.infer(&batch.next_states, &next_actions)?;
    Ok((0..batch.len())
        .map(|i| {
            if batch.terminal[i] {
                batch.rewards[i]
            } else {
                batch.rewards[i] + gamma * next_q[i]
            }
        })
        .collect())
}

/// Mean of ½(Q − y)² and its parameter gradient (train-mode batch norm).
pub fn critic_loss_and_grad(
    critic: &CriticNet,
    states: &Array2<f64>,
    actions: &[f64],
    targets: &[f64],
) -> Result<(f64, GradientSet, CriticCache), DdpgError> {
    let (q, cache) = critic.forward_train(states, actions)?;
    let n = q.len() as f64;
    let residual: Vec<f64> = q.iter().zip(targets).map(|(q, y)| q - y).collect();
    let loss = residual.iter().map(|r| 0.5 * r * r).sum::<f64>() / n;
    let upstream: Vec<f64> = residual.iter().map(|r| r / n).collect();
    let (grads, _) = critic.backward(&cache, &upstream)?;
    Ok((loss, grads, cache))
}

/// One Adam step on the critic. Returns the pre-update mean squared TD
/// error mean((Q − y)²), i.e. twice the minimized loss.
pub fn critic_step(
    critic: &mut CriticNet,
    batch: &ReplayMemory,
    targets: &[f64],
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<f64, DdpgError> {
    let (loss, grads, cache) = critic_loss_and_grad(critic, &batch.states, &batch.actions, targets)?;
    if !loss.is_finite() {
        return Err(DdpgError::NonFinite {
            iteration: 0,
            what: "critic loss".into(),
        });
    }
    apply_update(critic, &grads, opt, lr)?;
    critic.commit_running_stats(&cache, batch.len())?;
    Ok(2.0 * loss)
}

/// J(ϕ) = mean_s Q(s, π_ϕ(s)) and ∂J/∂ϕ through the critic's action input.
pub fn actor_objective_and_grad<C: ActionCritic + ?Sized>(
    actor: &ActorNet,
    critic: &C,
    states: &Array2<f64>,
) -> Result<(f64, GradientSet, ActorCache), DdpgError> {
    let (actions, cache) = actor.forward_train(states)?;
    let (q, dq_da) = critic.q_and_action_grad(states, &actions)?;
    let objective = q.iter().sum::<f64>() / q.len() as f64;
    let grads = actor.backward(&cache, &dq_da)?;
    Ok((objective, grads, cache))
}

/// One Adam ascent step on J; the critic is only read. Returns the
/// pre-update objective.
pub fn actor_step<C: ActionCritic + ?Sized>(
    actor: &mut ActorNet,
    critic: &C,
    states: &Array2<f64>,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<f64, DdpgError> {
    let (objective, grads, cache) = actor_objective_and_grad(actor, critic, states)?;
    if !objective.is_finite() {
        return Err(DdpgError::NonFinite {
            iteration: 0,
            what: "actor objective".into(),
        });
    }
    let descent: GradientSet = grads.into_iter().map(|g| g.into_iter().map(|v| -v).collect()).collect();
    apply_update(actor, &descent, opt, lr)?;
    actor.commit_running_stats(&cache, states.nrows())?;
    Ok(objective)
}

/// Mean over the dataset of (π(s) − a_logged)².
pub fn consistency_metric(actor: &ActorNet, memory: &ReplayMemory) -> Result<f64, DdpgError> {
    if memory.is_empty() {
        return Err(DdpgError::EmptyMemory);
    }
    let pi = actor.infer(&memory.states)?;
    Ok(pi
        .iter()
        .zip(&memory.actions)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / memory.len() as f64)
}

/// Recommended flow for one normalized state, in [0, 60].
pub fn recommend(actor: &ActorNet, state: &[f64]) -> Result<f64, DdpgError> {
    let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("1×d");
    Ok(actor.infer(&x)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStop,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub td_mse: f64,
    pub consistency_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub best_consistency: Option<f64>,
}

/// Hooks into the training loop.
pub trait TrainObserver {
    /// May replace the computed consistency metric (e.g. to freeze it).
    fn consistency(&mut self, _iteration: usize, computed: f64) -> f64 {
        computed
    }

    fn after_iteration(&mut self, _iteration: usize, _agent: &Agent) {}
}

/// Observer that changes nothing.
pub struct Quiet;

impl TrainObserver for Quiet {}

/// Trains from scratch. See [`train_agent`] for the loop.
pub fn train(memory: &ReplayMemory, config: &TrainingConfig) -> Result<(Agent, TrainingLog), DdpgError> {
    let mut agent = Agent::new(memory.state_dim(), config.seed)?;
    let log = train_agent(&mut agent, memory, config, &mut Quiet)?;
    Ok((agent, log))
}

/// Iterations are numbered from 1. Each one samples `batch_size` rows
/// uniformly with replacement, then runs critic step, actor step and polyak
/// averaging. The consistency metric is evaluated on the whole memory when
/// `iteration % consistency_every == 0`; training stops once
/// `iteration − last_improvement ≥ early_stop_window`. Final (not best)
/// parameters are kept.
pub fn train_agent(
    agent: &mut Agent,
    memory: &ReplayMemory,
    config: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainingLog, DdpgError> {
    config.validate()?;
    if memory.is_empty() {
        return Err(DdpgError::EmptyMemory);
    }
    if memory.state_dim() != agent.actor.state_dim() {
        return Err(DdpgError::StateDim {
            expected: agent.actor.state_dim(),
            got: memory.state_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    let mut best = f64::INFINITY;
    let mut last_improvement = 0usize;
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut idx = vec![0usize; config.batch_size];

    for it in 1..=config.max_iterations {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..memory.len());
        }
        let batch = memory.batch(&idx);
        let at = |e: DdpgError| match e {
            DdpgError::NonFinite { what, .. } => DdpgError::NonFinite { iteration: it, what },
            DdpgError::Nn(NnError::NonFiniteGradient { tensor, index }) => DdpgError::NonFinite {
                iteration: it,
                what: format!("gradient (tensor {tensor}, index {index})"),
            },
            other => other,
        };
        let targets = td_target(&batch, &agent.target_actor, &agent.target_critic, config.gamma).map_err(at)?;
        let td_mse = critic_step(&mut agent.critic, &batch, &targets, &mut agent.critic_opt, config.lr_critic)
            .map_err(at)?;
        actor_step(&mut agent.actor, &agent.critic, &batch.states, &mut agent.actor_opt, config.lr_actor)
            .map_err(at)?;
        polyak_update(&mut agent.target_critic, &agent.critic, config.rho)?;
        polyak_update(&mut agent.target_actor, &agent.actor, config.rho)?;

        let consistency = if it % config.consistency_every == 0 {
            let computed = consistency_metric(&agent.actor, memory)?;
            let m = observer.consistency(it, computed);
            if m < best {
                best = m;
                last_improvement = it;
            }
            Some(m)
        } else {
            None
        };
        rows.push(LogRow {
            iteration: it,
            td_mse,
            consistency_mse: consistency,
        });
        observer.after_iteration(it, agent);
        iterations = it;
        if config.early_stop_window > 0 && it - last_improvement >= config.early_stop_window {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainingLog {
        rows,
        stop_reason,
        iterations,
        best_consistency: best.is_finite().then_some(best),
    })
}
