//! Two-state deterministic MDP embedded in R².
//!
//! State A = (1, 0): a flow inside [30, 50] moves to B with reward 0, any
//! other flow dies (−15, terminal). State B = (0, 1): a flow inside [10, 30]
//! is discharged (+15), anything else dies; both terminal. Logged flows sit
//! on a grid that keeps at least 5 L/min away from every band edge.

use oxyrl::cohort::Transition;

pub const STATE_A: [f64; 2] = [1.0, 0.0];
pub const STATE_B: [f64; 2] = [0.0, 1.0];
pub const BAND_A: (f64, f64) = (30.0, 50.0);
pub const BAND_B: (f64, f64) = (10.0, 30.0);
pub const GAMMA: f64 = 0.99;
pub const LOGGED_A: [f64; 3] = [15.0, 40.0, 55.0];
pub const LOGGED_B: [f64; 3] = [5.0, 20.0, 45.0];

fn inside(a: f64, band: (f64, f64)) -> bool {
    a >= band.0 && a <= band.1
}

pub fn transitions(copies: usize) -> Vec<Transition> {
    let mut out = Vec::new();
    for _ in 0..copies {
        for &a in &LOGGED_A {
            let ok = inside(a, BAND_A);
            out.push(Transition {
                state: STATE_A.to_vec(),
                action: a,
                reward: if ok { 0.0 } else { -15.0 },
                next_state: STATE_B.to_vec(),
                terminal: !ok,
            });
        }
        for &a in &LOGGED_B {
            out.push(Transition {
                state: STATE_B.to_vec(),
                action: a,
                reward: if inside(a, BAND_B) { 15.0 } else { -15.0 },
                next_state: STATE_B.to_vec(),
                terminal: true,
            });
        }
    }
    out
}

/// Backward induction: B is the last decision, A bootstraps on max_a Q*(B, a).
pub fn q_star(state: [f64; 2], a: f64) -> f64 {
    let q_b = |a: f64| if inside(a, BAND_B) { 15.0 } else { -15.0 };
    if state == STATE_B {
        q_b(a)
    } else if inside(a, BAND_A) {
        GAMMA * 15.0
    } else {
        -15.0
    }
}

/// Band centres: the doses farthest from any edge.
pub fn optimal_dose(state: [f64; 2]) -> f64 {
    let band = if state == STATE_A { BAND_A } else { BAND_B };
    0.5 * (band.0 + band.1)
}

pub struct ToyResult {
    /// max |Q − Q*| over logged pairs, target critic.
    pub target_q_error: f64,
    /// Same for the online critic, reported only.
    pub online_q_error: f64,
    /// max |π(s) − optimum| over both states.
    pub policy_error: f64,
    pub seconds: f64,
}

pub fn toy_config() -> oxyrl::ddpg::TrainingConfig {
    oxyrl::ddpg::TrainingConfig {
        gamma: GAMMA,
        max_iterations: 60_000,
        early_stop_window: 0,
        seed: 11,
        ..Default::default()
    }
}

pub fn run_toy() -> ToyResult {
    use ndarray::Array2;
    use oxyrl::ddpg::{train, ReplayMemory};
    let start = std::time::Instant::now();
    let mem = ReplayMemory::new(&transitions(20)).expect("toy memory");
    let (agent, _) = train(&mem, &toy_config()).expect("toy training");
    let mut res = ToyResult {
        target_q_error: 0.0,
        online_q_error: 0.0,
        policy_error: 0.0,
        seconds: 0.0,
    };
    for (s, logged) in [(STATE_A, LOGGED_A), (STATE_B, LOGGED_B)] {
        let x = Array2::from_shape_fn((logged.len(), 2), |(_, j)| s[j]);
        let target = agent.target_critic.infer(&x, &logged).expect("infer");
        let online = agent.critic.infer(&x, &logged).expect("infer");
        for (k, &a) in logged.iter().enumerate() {
            res.target_q_error = res.target_q_error.max((target[k] - q_star(s, a)).abs());
            res.online_q_error = res.online_q_error.max((online[k] - q_star(s, a)).abs());
        }
        let pi = agent.actor.infer(&x).expect("infer")[0];
        res.policy_error = res.policy_error.max((pi - optimal_dose(s)).abs());
    }
    res.seconds = start.elapsed().as_secs_f64();
    res
}
