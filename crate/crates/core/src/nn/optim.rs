use serde::{Deserialize, Serialize};

use super::{GradientSet, NnError, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators shaped like a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

fn check_shapes(expected: &[usize], grads: &GradientSet) -> Result<(), NnError> {
    if grads.len() != expected.len() {
        return Err(NnError::DimensionMismatch {
            expected: expected.len(),
            got: grads.len(),
        });
    }
    for (e, g) in expected.iter().zip(grads) {
        if *e != g.len() {
            return Err(NnError::DimensionMismatch {
                expected: *e,
                got: g.len(),
            });
        }
    }
    Ok(())
}

/// One bias-corrected Adam descent step. Nothing is modified if any
/// gradient entry is non-finite.
pub fn apply_update<P: Parameters + ?Sized>(
    params: &mut P,
    grads: &GradientSet,
    opt: &mut OptimizerState,
    learning_rate: f64,
) -> Result<(), NnError> {
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    check_shapes(&shapes, grads)?;
    check_shapes(&shapes, &opt.m)?;
    for (tensor, g) in grads.iter().enumerate() {
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient { tensor, index });
        }
    }
    let AdamConfig { beta1, beta2, eps } = opt.config;
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, p) in params.tensors_mut().into_iter().enumerate() {
        let (m, v, g) = (&mut opt.m[k], &mut opt.v[k], &grads[k]);
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `target ← ρ·target + (1−ρ)·online` on every tensor and buffer.
pub fn polyak_update<P: Parameters + ?Sized>(target: &mut P, online: &P, rho: f64) -> Result<(), NnError> {
    let src: Vec<&[f64]> = online.tensors().into_iter().chain(online.buffers()).collect();
    let dst: Vec<&mut [f64]> = target.state_mut();
    if src.len() != dst.len() {
        return Err(NnError::DimensionMismatch {
            expected: dst.len(),
            got: src.len(),
        });
    }
    for (d, s) in dst.iter().zip(&src) {
        if d.len() != s.len() {
            return Err(NnError::DimensionMismatch {
                expected: d.len(),
                got: s.len(),
            });
        }
    }
    for (d, s) in dst.into_iter().zip(src) {
        if rho == 0.0 {
            d.copy_from_slice(s);
        } else if rho != 1.0 {
            for (a, b) in d.iter_mut().zip(s) {
                *a = rho * *a + (1.0 - rho) * b;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, LayerSpec, Network};

    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
        fn buffers(&self) -> Vec<&[f64]> {
            vec![]
        }
        fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
            vec![]
        }
        fn state_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn scalar_quadratic_converges() {
        // loss (p − 0.3)², gradient 2(p − 0.3); Adam moves at most ~lr per step
        let mut p = Scalar(vec![0.0]);
        let mut opt = OptimizerState::new(&p);
        for _ in 0..500 {
            let g = vec![vec![2.0 * (p.0[0] - 0.3)]];
            apply_update(&mut p, &g, &mut opt, 0.002).unwrap();
        }
        assert!((p.0[0] - 0.3).abs() < 1e-2, "{}", p.0[0]);
        assert_eq!(opt.step, 500);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_and_updates_are_deterministic() {
        let net = init_params(&[LayerSpec::Dense { in_dim: 3, out_dim: 2 }, LayerSpec::BatchNorm { dim: 2 }], 1).unwrap();
        let zeros: GradientSet = net.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let mut a = net.clone();
        let mut opt = OptimizerState::new(&a);
        apply_update(&mut a, &zeros, &mut opt, 0.1).unwrap();
        assert_eq!(a, net);

        let grads: GradientSet = net.tensors().iter().map(|t| t.iter().map(|v| v + 0.3).collect()).collect();
        let run = || {
            let mut n = net.clone();
            let mut o = OptimizerState::new(&n);
            apply_update(&mut n, &grads, &mut o, 0.01).unwrap();
            (n, o)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut p = Scalar(vec![1.0, 2.0]);
        let mut opt = OptimizerState::new(&p);
        let err = apply_update(&mut p, &vec![vec![0.5, f64::NAN]], &mut opt, 0.1).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { tensor: 0, index: 1 }));
        assert_eq!(p.0, vec![1.0, 2.0]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn polyak_endpoints_and_midpoint() {
        let specs = [LayerSpec::Dense { in_dim: 2, out_dim: 2 }, LayerSpec::BatchNorm { dim: 2 }];
        let online = init_params(&specs, 1).unwrap();
        let target0 = init_params(&specs, 2).unwrap();

        let mut t: Network = target0.clone();
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, target0);
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, online);

        let mut a = Scalar(vec![2.0]);
        polyak_update(&mut a, &Scalar(vec![4.0]), 0.5).unwrap();
        assert_eq!(a.0, vec![3.0]);
    }
}
