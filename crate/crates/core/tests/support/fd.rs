//! Central finite differences against analytic DDPG gradients.
#![allow(dead_code)]

use ndarray::Array2;
use oxyrl::ddpg::{actor_objective_and_grad, critic_loss_and_grad, ActorNet, CriticNet};
use oxyrl::nn::{Mode, Parameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// |a − n| / max(|a|, |n|, floor). Central differences carry rounding noise
/// of order 1e-16·|f|/ε, amplified by whatever the perturbation passes
/// through, so entries whose true gradient is zero (a bias feeding batch
/// norm) need `floor = 1e-5·max(1, |f|, max |g|)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn floor_for(f: f64, grads: &[Vec<f64>]) -> f64 {
    let g = grads.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-5 * f.abs().max(g).max(1.0)
}

/// Max relative error of `grads` against central differences of `f` over
/// every trainable entry of `params`.
pub fn check<P: Parameters + Clone>(params: &P, grads: &[Vec<f64>], f: impl Fn(&P) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let floor = floor_for(f(params), grads);
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    assert_eq!(grads.len(), shapes.len());
    for (k, &len) in shapes.iter().enumerate() {
        assert_eq!(grads[k].len(), len);
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[k][i] += EPS;
            let mut minus = params.clone();
            minus.tensors_mut()[k][i] -= EPS;
            let fd = (f(&plus) - f(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(grads[k][i], fd, floor));
        }
    }
    worst
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn perturb_params<P: Parameters>(p: &mut P, rng: &mut ChaCha8Rng) {
    // move batch-norm scale/shift and biases off their initial values
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    // running means and (positive) running variances too
    for t in p.buffers_mut() {
        for v in t.iter_mut() {
            *v = if *v == 0.0 { rng.random_range(-0.5..0.5) } else { rng.random_range(0.5..2.0) };
        }
    }
}

/// Critic loss and actor objective gradients for one seed; inputs are
/// resampled until no ReLU input lies within 1e-3 of the kink.
pub fn ddpg_gradient_errors(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..7);
    let n = 8;
    let mut critic = CriticNet::new(d, seed).unwrap();
    let mut actor = ActorNet::new(d, seed + 1000).unwrap();
    perturb_params(&mut critic, &mut rng);
    perturb_params(&mut actor, &mut rng);
    let (states, actions, targets) = loop {
        let s = random_matrix(&mut rng, n, d, 2.0);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-15.0..15.0)).collect();
        let (_, cc) = critic.forward_train(&s, &a).unwrap();
        let (pa, ac) = actor.forward_train(&s).unwrap();
        let (_, cc2) = critic.forward_cached(&s, &pa, Mode::Infer).unwrap();
        if cc.min_relu_input() > 1e-3 && ac.min_relu_input() > 1e-3 && cc2.min_relu_input() > 1e-3 {
            break (s, a, y);
        }
    };

    let (_, cgrads, _) = critic_loss_and_grad(&critic, &states, &actions, &targets).unwrap();
    let critic_err = check(&critic, &cgrads, |c| {
        critic_loss_and_grad(c, &states, &actions, &targets).unwrap().0
    });

    let (_, agrads, _) = actor_objective_and_grad(&actor, &critic, &states).unwrap();
    let actor_err = check(&actor, &agrads, |a| {
        let (pi, _) = a.forward_train(&states).unwrap();
        let q = critic.infer(&states, &pi).unwrap();
        q.iter().sum::<f64>() / q.len() as f64
    });
    (critic_err, actor_err)
}

