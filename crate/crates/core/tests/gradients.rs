//! Analytic gradients against central finite differences.

#[path = "support/fd.rs"]
mod fd;

use fd::*;
use ndarray::Array2;
use oxyrl::ddpg::{actor_objective_and_grad, ActionCritic, ActorNet};
use oxyrl::nn::{init_params, Activation, LayerCache, LayerSpec, Mode, Network, NnError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn min_relu_input(cache: &oxyrl::nn::ForwardCache, net: &Network) -> f64 {
    net.layers
        .iter()
        .zip(&cache.layers)
        .filter_map(|(l, c)| match (l, c) {
            (oxyrl::nn::Layer::Activation { activation: Activation::Relu, .. }, LayerCache::Activation { input, .. }) => {
                input.iter().map(|v| v.abs()).reduce(f64::min)
            }
            _ => None,
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn ddpg_losses_match_finite_differences_over_20_seeds() {
    for seed in 0..20 {
        let (c, a) = ddpg_gradient_errors(seed);
        assert!(c < REL_TOL, "seed {seed}: critic rel err {c:e}");
        assert!(a < REL_TOL, "seed {seed}: actor rel err {a:e}");
    }
}

struct Quadratic;

impl ActionCritic for Quadratic {
    fn q_and_action_grad(&self, _s: &Array2<f64>, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let n = a.len() as f64;
        Ok((
            a.iter().map(|a| -(a - 30.0) * (a - 30.0)).collect(),
            a.iter().map(|a| -2.0 * (a - 30.0) / n).collect(),
        ))
    }
}

#[test]
fn actor_gradient_through_analytic_critic_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut actor = ActorNet::new(3, 2).unwrap();
    perturb_params(&mut actor, &mut rng);
    let states = random_matrix(&mut rng, 10, 3, 1.5);
    let (_, g, _) = actor_objective_and_grad(&actor, &Quadratic, &states).unwrap();
    let err = check(&actor, &g, |a| {
        let (pi, _) = a.forward_train(&states).unwrap();
        Quadratic.q_and_action_grad(&states, &pi).unwrap().0.iter().sum::<f64>() / pi.len() as f64
    });
    assert!(err < REL_TOL, "{err:e}");
}

fn net_loss(net: &Network, x: &Array2<f64>, up: &Array2<f64>, mode: Mode) -> f64 {
    let (y, _) = net.forward(x, mode).unwrap();
    (&y * up).sum()
}

fn arb_spec() -> impl Strategy<Value = (Vec<LayerSpec>, usize)> {
    let act = prop_oneof![
        Just(Activation::Relu),
        Just(Activation::Tanh),
        Just(Activation::Sigmoid),
        Just(Activation::Linear)
    ];
    (1usize..5, proptest::collection::vec((1usize..6, any::<bool>(), act), 1..=3)).prop_map(|(input, layers)| {
        let mut specs = Vec::new();
        let mut d = input;
        for (out, bn, act) in layers {
            specs.push(LayerSpec::Dense { in_dim: d, out_dim: out });
            if bn {
                specs.push(LayerSpec::BatchNorm { dim: out });
            }
            specs.push(LayerSpec::Activation { dim: out, activation: act });
            d = out;
        }
        (specs, input)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_networks_match_finite_differences((specs, input) in arb_spec(), seed in 0u64..10_000, train in any::<bool>()) {
        let mode = if train { Mode::Train } else { Mode::Infer };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = init_params(&specs, seed).unwrap();
        perturb_params(&mut net, &mut rng);
        let rows = 6;
        let mut tries = 0;
        let x = loop {
            let x = random_matrix(&mut rng, rows, input, 2.0);
            let (_, cache) = net.forward_cached(&x, mode).unwrap();
            if min_relu_input(&cache, &net) > 1e-3 {
                break Some(x);
            }
            tries += 1;
            if tries > 50 {
                break None;
            }
        };
        prop_assume!(x.is_some());
        let x = x.unwrap();
        let up = random_matrix(&mut rng, rows, net.out_dim(), 1.0);
        let (_, cache) = net.forward_cached(&x, mode).unwrap();
        let (grads, dx) = net.backward(&cache, &up).unwrap();
        let err = check(&net, &grads, |n| net_loss(n, &x, &up, mode));
        let floor = floor_for(net_loss(&net, &x, &up, mode), &grads);
        prop_assert!(err < REL_TOL, "parameter rel err {err:e}");
        for r in 0..rows {
            for c in 0..input {
                let mut p = x.clone();
                p[[r, c]] += EPS;
                let mut m = x.clone();
                m[[r, c]] -= EPS;
                let fd = (net_loss(&net, &p, &up, mode) - net_loss(&net, &m, &up, mode)) / (2.0 * EPS);
                prop_assert!(rel_err(dx[[r, c]], fd, floor) < REL_TOL, "input grad {} vs {fd}", dx[[r, c]]);
            }
        }
    }
}
