//! Dense / batch-norm feed-forward networks with manual backpropagation.
//!
//! Matrices are `[rows × features]`; a Dense weight is `[in × out]` so a
//! layer computes `x · W + b`. Parameters are exposed as flat row-major
//! slices through [`Parameters`], which is what the optimizer, polyak
//! averaging and the finite-difference tests work on.

mod checkpoint;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, NetworkCheckpoint};
pub use optim::{apply_update, polyak_update, AdamConfig, OptimizerState};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("train-mode batch normalization needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("forward cache does not match this network: {0}")]
    StaleCache(String),
    #[error("non-finite gradient in tensor {tensor} at index {index}")]
    NonFiniteGradient { tensor: usize, index: usize },
    #[error("inconsistent layer chain: {0}")]
    InconsistentSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    BatchNorm { dim: usize },
    Activation { dim: usize, activation: Activation },
}

impl LayerSpec {
    pub fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, .. } => in_dim,
            LayerSpec::BatchNorm { dim } | LayerSpec::Activation { dim, .. } => dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { out_dim, .. } => out_dim,
            LayerSpec::BatchNorm { dim } | LayerSpec::Activation { dim, .. } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
    Activation {
        dim: usize,
        activation: Activation,
    },
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense { weight, .. } => LayerSpec::Dense {
                in_dim: weight.nrows(),
                out_dim: weight.ncols(),
            },
            Layer::BatchNorm { gamma, .. } => LayerSpec::BatchNorm { dim: gamma.len() },
            Layer::Activation { dim, activation } => LayerSpec::Activation {
                dim: *dim,
                activation: *activation,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm layers.
    Train,
    /// Running statistics; rows are independent.
    Infer,
}

/// Per-layer values recorded by a train-mode forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense {
        input: Array2<f64>,
    },
    BatchNorm {
        x_hat: Array2<f64>,
        inv_std: Array1<f64>,
        batch_mean: Array1<f64>,
        batch_var: Array1<f64>,
        /// Normalized with running statistics: rows are independent and
        /// there is nothing to commit.
        frozen: bool,
    },
    Activation {
        input: Array2<f64>,
        output: Array2<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
}

/// Flat trainable tensors (and non-trainable buffers) in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Running statistics; averaged by polyak but never trained.
    fn buffers(&self) -> Vec<&[f64]>;
    fn buffers_mut(&mut self) -> Vec<&mut [f64]>;
    /// Tensors followed by buffers, for whole-state averaging.
    fn state_mut(&mut self) -> Vec<&mut [f64]>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Gradient tensors aligned with [`Parameters::tensors`].
pub type GradientSet = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Builds a network with Dense weights uniform in ±1/√fan_in, zero biases
/// and identity batch norm.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<Network, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        if spec.in_dim() == 0 || spec.out_dim() == 0 {
            return Err(NnError::InconsistentSpec(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && specs[i - 1].out_dim() != spec.in_dim() {
            return Err(NnError::InconsistentSpec(format!(
                "layer {} outputs {} but layer {i} expects {}",
                i - 1,
                specs[i - 1].out_dim(),
                spec.in_dim()
            )));
        }
        layers.push(match *spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let bound = 1.0 / (in_dim as f64).sqrt();
                Layer::Dense {
                    weight: Array2::from_shape_fn((in_dim, out_dim), |_| {
                        rng.random_range(-bound..=bound)
                    }),
                    bias: Array1::zeros(out_dim),
                }
            }
            LayerSpec::BatchNorm { dim } => Layer::BatchNorm {
                gamma: Array1::ones(dim),
                beta: Array1::zeros(dim),
                running_mean: Array1::zeros(dim),
                running_var: Array1::ones(dim),
            },
            LayerSpec::Activation { dim, activation } => Layer::Activation { dim, activation },
        });
    }
    if layers.is_empty() {
        return Err(NnError::InconsistentSpec("no layers".into()));
    }
    Ok(Network { layers })
}

/// Rows per parallel chunk in [`Network::infer`].
const INFER_CHUNK: usize = 512;

impl Network {
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec().in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec().out_dim()
    }

    /// Checks the layer chain and running-variance positivity.
    pub fn validate(&self) -> Result<(), NnError> {
        let specs = self.specs();
        for (i, w) in specs.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(NnError::InconsistentSpec(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].out_dim(),
                    i + 1,
                    w[1].in_dim()
                )));
            }
        }
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias } if weight.ncols() != bias.len() => {
                    return Err(NnError::InconsistentSpec("bias length differs from weight columns".into()));
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let d = gamma.len();
                    if beta.len() != d || running_mean.len() != d || running_var.len() != d {
                        return Err(NnError::InconsistentSpec("batch-norm tensor lengths differ".into()));
                    }
                    if running_var.iter().any(|v| !(*v > 0.0)) {
                        return Err(NnError::InconsistentSpec("running variance must be positive".into()));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.in_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Pure forward pass. In `Train` mode batch norm uses batch statistics
    /// and the cache needed by [`Network::backward`] is returned; running
    /// statistics are not touched (see [`Network::commit_running_stats`]).
    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, Option<ForwardCache>), NnError> {
        self.check_input(x)?;
        match mode {
            Mode::Infer => Ok((self.infer_rows(x), None)),
            Mode::Train => {
                let (y, cache) = self.forward_train_pure(x)?;
                Ok((y, Some(cache)))
            }
        }
    }

    /// Infer-mode forward pass, split into fixed row chunks that run in
    /// parallel. Chunking does not depend on the thread count.
    pub fn infer(&self, x: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(x)?;
        if x.nrows() <= INFER_CHUNK {
            return Ok(self.infer_rows(x));
        }
        let starts: Vec<usize> = (0..x.nrows()).step_by(INFER_CHUNK).collect();
        let parts = par::map(&starts, |&s| {
            let e = (s + INFER_CHUNK).min(x.nrows());
            self.infer_rows(&x.slice(ndarray::s![s..e, ..]).to_owned())
        });
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("chunks share a width"))
    }

    fn infer_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { weight, bias } => h.dot(weight) + bias,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let scale: Array1<f64> = running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt()) * gamma;
                    (h - running_mean) * &scale + beta
                }
                Layer::Activation { activation, .. } => h.mapv(|v| activation.apply(v)),
            };
        }
        h
    }

    /// Forward pass that always records a cache. In `Infer` mode batch norm
    /// uses running statistics and its backward pass treats them as
    /// constants.
    pub fn forward_cached(&self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(x)?;
        match mode {
            Mode::Train => self.forward_train_pure(x),
            Mode::Infer => Ok(self.forward_with_cache(x, true)),
        }
    }

    fn forward_train_pure(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        let n = x.nrows();
        let has_bn = self.layers.iter().any(|l| matches!(l, Layer::BatchNorm { .. }));
        if has_bn && n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        Ok(self.forward_with_cache(x, false))
    }

    fn forward_with_cache(&self, x: &Array2<f64>, frozen: bool) -> (Array2<f64>, ForwardCache) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { weight, bias } => {
                    let out = h.dot(weight) + bias;
                    caches.push(LayerCache::Dense { input: h });
                    out
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let (mean, var) = if frozen {
                        (running_mean.clone(), running_var.clone())
                    } else {
                        let mean = h.mean_axis(Axis(0)).expect("n >= 2");
                        let var = (&h - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("n >= 2");
                        (mean, var)
                    };
                    let centered = &h - &mean;
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let x_hat = centered * &inv_std;
                    let out = &x_hat * gamma + beta;
                    caches.push(LayerCache::BatchNorm {
                        x_hat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                        frozen,
                    });
                    out
                }
                Layer::Activation { activation, .. } => {
                    let out = h.mapv(|v| activation.apply(v));
                    caches.push(LayerCache::Activation { input: h, output: out.clone() });
                    out
                }
            };
        }
        (h, ForwardCache { layers: caches })
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates: `r ← m·r + (1−m)·batch` with the unbiased batch variance.
    pub fn commit_running_stats(&mut self, cache: &ForwardCache, batch_rows: usize) -> Result<(), NnError> {
        self.check_cache(cache)?;
        let unbias = if batch_rows > 1 {
            batch_rows as f64 / (batch_rows - 1) as f64
        } else {
            1.0
        };
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers) {
            if let (
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                LayerCache::BatchNorm {
                    batch_mean,
                    batch_var,
                    frozen: false,
                    ..
                },
            ) = (layer, c)
            {
                running_mean.zip_mut_with(batch_mean, |r, b| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b);
                running_var.zip_mut_with(batch_var, |r, b| {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b * unbias
                });
            }
        }
        Ok(())
    }

    /// Train-mode forward that also updates running statistics.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(x)?;
        let (y, cache) = self.forward_train_pure(x)?;
        self.commit_running_stats(&cache, x.nrows())?;
        Ok((y, cache))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<(), NnError> {
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache(format!(
                "{} cached layers for a {}-layer network",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        for (i, (l, c)) in self.layers.iter().zip(&cache.layers).enumerate() {
            let ok = match (l, c) {
                (Layer::Dense { weight, .. }, LayerCache::Dense { input }) => input.ncols() == weight.nrows(),
                (Layer::BatchNorm { gamma, .. }, LayerCache::BatchNorm { x_hat, .. }) => x_hat.ncols() == gamma.len(),
                (Layer::Activation { dim, .. }, LayerCache::Activation { input, .. }) => input.ncols() == *dim,
                _ => false,
            };
            if !ok {
                return Err(NnError::StaleCache(format!("layer {i} does not match its cache entry")));
            }
        }
        Ok(())
    }

    /// Gradients of `sum(upstream ⊙ output)` with respect to every trainable
    /// tensor and to the input, including batch norm's dependence on the
    /// batch statistics.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<(GradientSet, Array2<f64>), NnError> {
        self.check_cache(cache)?;
        let rows = match &cache.layers[cache.layers.len() - 1] {
            LayerCache::Dense { input } => input.nrows(),
            LayerCache::BatchNorm { x_hat, .. } => x_hat.nrows(),
            LayerCache::Activation { input, .. } => input.nrows(),
        };
        if upstream.nrows() != rows || upstream.ncols() != self.out_dim() {
            return Err(NnError::StaleCache(format!(
                "upstream gradient is {}×{}, output is {rows}×{}",
                upstream.nrows(),
                upstream.ncols(),
                self.out_dim()
            )));
        }
        let mut grads_rev: Vec<Vec<f64>> = Vec::new();
        let mut g = upstream.clone();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            g = match (layer, c) {
                (Layer::Dense { weight, .. }, LayerCache::Dense { input }) => {
                    let dw = input.t().dot(&g);
                    let db = g.sum_axis(Axis(0));
                    grads_rev.push(db.to_vec());
                    grads_rev.push(row_major(dw));
                    g.dot(&weight.t())
                }
                (
                    Layer::BatchNorm { gamma, .. },
                    LayerCache::BatchNorm {
                        x_hat,
                        inv_std,
                        frozen: true,
                        ..
                    },
                ) => {
                    let dgamma = (&g * x_hat).sum_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0));
                    grads_rev.push(dbeta.to_vec());
                    grads_rev.push(dgamma.to_vec());
                    g * &(inv_std * gamma)
                }
                (Layer::BatchNorm { gamma, .. }, LayerCache::BatchNorm { x_hat, inv_std, .. }) => {
                    let n = x_hat.nrows() as f64;
                    let dgamma = (&g * x_hat).sum_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0));
                    let dxh = &g * gamma;
                    let sum_dxh = dxh.sum_axis(Axis(0));
                    let sum_dxh_xh = (&dxh * x_hat).sum_axis(Axis(0));
                    let dx = (dxh * n - &sum_dxh - x_hat * &sum_dxh_xh) * &(inv_std / n);
                    grads_rev.push(dbeta.to_vec());
                    grads_rev.push(dgamma.to_vec());
                    dx
                }
                (Layer::Activation { activation, .. }, LayerCache::Activation { input, output }) => {
                    let mut d = g;
                    ndarray::Zip::from(&mut d)
                        .and(input)
                        .and(output)
                        .for_each(|d, &x, &y| *d *= activation.derivative(x, y));
                    d
                }
                _ => unreachable!("checked by check_cache"),
            };
        }
        grads_rev.reverse();
        Ok((grads_rev, g))
    }
}

fn row_major(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

impl Network {
    fn collect_mut(&mut self, trainable: bool, buffers: bool) -> Vec<&mut [f64]> {
        let mut tensors = Vec::new();
        let mut stats = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Dense { weight, bias } => {
                    tensors.push(weight.as_slice_mut().expect("standard layout"));
                    tensors.push(bias.as_slice_mut().expect("contiguous"));
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    tensors.push(gamma.as_slice_mut().expect("contiguous"));
                    tensors.push(beta.as_slice_mut().expect("contiguous"));
                    stats.push(running_mean.as_slice_mut().expect("contiguous"));
                    stats.push(running_var.as_slice_mut().expect("contiguous"));
                }
                Layer::Activation { .. } => {}
            }
        }
        let mut out = if trainable { tensors } else { Vec::new() };
        if buffers {
            out.extend(stats);
        }
        out
    }
}

impl Parameters for Network {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Dense { weight, bias } => {
                    out.push(weight.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("contiguous"));
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_slice().expect("contiguous"));
                    out.push(beta.as_slice().expect("contiguous"));
                }
                Layer::Activation { .. } => {}
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.collect_mut(true, false)
    }

    fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = l
            {
                out.push(running_mean.as_slice().expect("contiguous"));
                out.push(running_var.as_slice().expect("contiguous"));
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.collect_mut(false, true)
    }

    fn state_mut(&mut self) -> Vec<&mut [f64]> {
        self.collect_mut(true, true)
    }
}
