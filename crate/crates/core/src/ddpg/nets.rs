use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cohort::MAX_FLOW;
use crate::nn::{
    init_params, sigmoid, Activation, ForwardCache, GradientSet, LayerCache, LayerSpec, Mode, Network, NnError,
    Parameters,
};

/// Hidden width of the state branch (both nets).
pub const STATE_HIDDEN: usize = 32;
/// Hidden width of the critic trunk.
pub const TRUNK_HIDDEN: usize = 16;

/// Flows enter the critic as (a − 30)/30 so the action column has the same
/// scale as the normalized state features.
pub fn scale_action(a: f64) -> f64 {
    (a - MAX_FLOW / 2.0) / (MAX_FLOW / 2.0)
}

const ACTION_SCALE_DERIVATIVE: f64 = 2.0 / MAX_FLOW;

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("n×1")
}

fn dim_check(x: &Array2<f64>, expected: usize) -> Result<(), NnError> {
    if x.ncols() != expected {
        return Err(NnError::DimensionMismatch {
            expected,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Q(s, a): Dense(d→32)+BN+ReLU on the state, concatenated with the action,
/// then Dense(33→16)+BN+ReLU and a linear Dense(16→1) head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub state_branch: Network,
    pub trunk: Network,
}

pub struct CriticCache {
    branch: ForwardCache,
    trunk: ForwardCache,
}

impl CriticCache {
    /// Smallest |pre-activation| feeding any ReLU, for kink-aware tests.
    pub fn min_relu_input(&self) -> f64 {
        min_relu_input(&self.branch).min(min_relu_input(&self.trunk))
    }
}

fn min_relu_input(cache: &ForwardCache) -> f64 {
    cache
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerCache::Activation { input, .. } => input.iter().map(|v| v.abs()).reduce(f64::min),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min)
}

impl CriticNet {
    pub fn new(state_dim: usize, seed: u64) -> Result<Self, NnError> {
        let state_branch = init_params(
            &[
                LayerSpec::Dense {
                    in_dim: state_dim,
                    out_dim: STATE_HIDDEN,
                },
                LayerSpec::BatchNorm { dim: STATE_HIDDEN },
                LayerSpec::Activation {
                    dim: STATE_HIDDEN,
                    activation: Activation::Relu,
                },
            ],
            seed,
        )?;
        let trunk = init_params(
            &[
                LayerSpec::Dense {
                    in_dim: STATE_HIDDEN + 1,
                    out_dim: TRUNK_HIDDEN,
                },
                LayerSpec::BatchNorm { dim: TRUNK_HIDDEN },
                LayerSpec::Activation {
                    dim: TRUNK_HIDDEN,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    in_dim: TRUNK_HIDDEN,
                    out_dim: 1,
                },
            ],
            seed.wrapping_add(0x9E37_79B9),
        )?;
        Ok(Self { state_branch, trunk })
    }

    pub fn state_dim(&self) -> usize {
        self.state_branch.in_dim()
    }

    fn merge(h: Array2<f64>, actions: &[f64]) -> Array2<f64> {
        let a: Vec<f64> = actions.iter().map(|&a| scale_action(a)).collect();
        concatenate(Axis(1), &[h.view(), column(&a).view()]).expect("same row count")
    }

    fn check(&self, states: &Array2<f64>, actions: &[f64]) -> Result<(), NnError> {
        dim_check(states, self.state_dim())?;
        if actions.len() != states.nrows() {
            return Err(NnError::DimensionMismatch {
                expected: states.nrows(),
                got: actions.len(),
            });
        }
        Ok(())
    }

    /// Infer-mode Q values.
    pub fn infer(&self, states: &Array2<f64>, actions: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check(states, actions)?;
        let h = self.state_branch.infer(states)?;
        let q = self.trunk.infer(&Self::merge(h, actions))?;
        Ok(q.column(0).to_vec())
    }

    /// Train-mode Q values with the cache for [`CriticNet::backward`].
    /// Running statistics are left untouched.
    pub fn forward_train(&self, states: &Array2<f64>, actions: &[f64]) -> Result<(Vec<f64>, CriticCache), NnError> {
        self.forward_cached(states, actions, Mode::Train)
    }

    /// Q values with a backward cache in either mode.
    pub fn forward_cached(
        &self,
        states: &Array2<f64>,
        actions: &[f64],
        mode: Mode,
    ) -> Result<(Vec<f64>, CriticCache), NnError> {
        self.check(states, actions)?;
        let (h, branch) = self.state_branch.forward_cached(states, mode)?;
        let (q, trunk) = self.trunk.forward_cached(&Self::merge(h, actions), mode)?;
        Ok((q.column(0).to_vec(), CriticCache { branch, trunk }))
    }

    pub fn commit_running_stats(&mut self, cache: &CriticCache, rows: usize) -> Result<(), NnError> {
        self.state_branch.commit_running_stats(&cache.branch, rows)?;
        self.trunk.commit_running_stats(&cache.trunk, rows)
    }

    /// Gradients of Σ_i upstream_i·Q_i: parameter gradients (branch tensors
    /// then trunk tensors) and ∂/∂a_i in L/min units.
    pub fn backward(&self, cache: &CriticCache, upstream: &[f64]) -> Result<(GradientSet, Vec<f64>), NnError> {
        let (mut trunk_grads, d_merged) = self.trunk.backward(&cache.trunk, &column(upstream))?;
        let d_h = d_merged.slice(ndarray::s![.., ..STATE_HIDDEN]).to_owned();
        let d_action: Vec<f64> = d_merged
            .column(STATE_HIDDEN)
            .iter()
            .map(|g| g * ACTION_SCALE_DERIVATIVE)
            .collect();
        let (mut grads, _) = self.state_branch.backward(&cache.branch, &d_h)?;
        grads.append(&mut trunk_grads);
        Ok((grads, d_action))
    }
}

impl Parameters for CriticNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.state_branch.tensors();
        t.extend(self.trunk.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.state_branch.tensors_mut();
        t.extend(self.trunk.tensors_mut());
        t
    }

    fn buffers(&self) -> Vec<&[f64]> {
        let mut t = self.state_branch.buffers();
        t.extend(self.trunk.buffers());
        t
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.state_branch.buffers_mut();
        t.extend(self.trunk.buffers_mut());
        t
    }

    fn state_mut(&mut self) -> Vec<&mut [f64]> {
        let (mut bt, mut bb) = (Vec::new(), Vec::new());
        let CriticNet { state_branch, trunk } = self;
        for net in [state_branch, trunk] {
            let n_tensors = net.tensors().len();
            let mut all = net.state_mut();
            let buffers = all.split_off(n_tensors);
            bt.extend(all);
            bb.extend(buffers);
        }
        bt.extend(bb);
        bt
    }
}

/// π(s) = 60·σ(Dense(32→1)(ReLU(BN(Dense(d→32)(s))))).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorNet {
    pub net: Network,
}

pub struct ActorCache {
    net: ForwardCache,
    /// σ(z) per row.
    squashed: Vec<f64>,
}

impl ActorCache {
    pub fn min_relu_input(&self) -> f64 {
        min_relu_input(&self.net)
    }
}

impl ActorNet {
    pub fn new(state_dim: usize, seed: u64) -> Result<Self, NnError> {
        let net = init_params(
            &[
                LayerSpec::Dense {
                    in_dim: state_dim,
                    out_dim: STATE_HIDDEN,
                },
                LayerSpec::BatchNorm { dim: STATE_HIDDEN },
                LayerSpec::Activation {
                    dim: STATE_HIDDEN,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    in_dim: STATE_HIDDEN,
                    out_dim: 1,
                },
            ],
            seed,
        )?;
        Ok(Self { net })
    }

    pub fn state_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn infer(&self, states: &Array2<f64>) -> Result<Vec<f64>, NnError> {
        dim_check(states, self.state_dim())?;
        let z = self.net.infer(states)?;
        Ok(z.column(0).iter().map(|&z| MAX_FLOW * sigmoid(z)).collect())
    }

    /// Train-mode actions and cache; running statistics are not updated.
    pub fn forward_train(&self, states: &Array2<f64>) -> Result<(Vec<f64>, ActorCache), NnError> {
        dim_check(states, self.state_dim())?;
        let (z, cache) = self.net.forward(states, Mode::Train)?;
        let squashed: Vec<f64> = z.column(0).iter().map(|&z| sigmoid(z)).collect();
        let actions = squashed.iter().map(|s| MAX_FLOW * s).collect();
        Ok((
            actions,
            ActorCache {
                net: cache.expect("train mode caches"),
                squashed,
            },
        ))
    }

    pub fn commit_running_stats(&mut self, cache: &ActorCache, rows: usize) -> Result<(), NnError> {
        self.net.commit_running_stats(&cache.net, rows)
    }

    /// Parameter gradients of Σ_i upstream_i·π(s_i).
    pub fn backward(&self, cache: &ActorCache, upstream: &[f64]) -> Result<GradientSet, NnError> {
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&cache.squashed)
            .map(|(g, s)| g * MAX_FLOW * s * (1.0 - s))
            .collect();
        Ok(self.net.backward(&cache.net, &column(&dz))?.0)
    }
}

impl Parameters for ActorNet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
    fn buffers(&self) -> Vec<&[f64]> {
        self.net.buffers()
    }
    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.buffers_mut()
    }
    fn state_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.state_mut()
    }
}

/// Anything that scores actions and reports ∂(mean Q)/∂a_i. The training
/// loop uses [`CriticNet`]; tests inject closed-form critics.
pub trait ActionCritic {
    fn q_and_action_grad(&self, states: &Array2<f64>, actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError>;
}

impl ActionCritic for CriticNet {
    /// Infer-mode evaluation. With batch statistics the trunk's batch norm
    /// would subtract the batch mean of the action column, hiding any shift
    /// applied to every action at once.
    fn q_and_action_grad(&self, states: &Array2<f64>, actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let (q, cache) = self.forward_cached(states, actions, Mode::Infer)?;
        let n = q.len() as f64;
        let (_, da) = self.backward(&cache, &vec![1.0 / n; q.len()])?;
        Ok((q, da))
    }
}
