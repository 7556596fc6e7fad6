#[path = "support/toy.rs"]
mod toy;

use oxyrl::ddpg::ReplayMemory;
use toy::*;

#[test]
fn backward_induction_values() {
    assert_eq!(q_star(STATE_B, 20.0), 15.0);
    assert_eq!(q_star(STATE_B, 45.0), -15.0);
    assert_eq!(q_star(STATE_A, 40.0), 0.99 * 15.0);
    assert_eq!(q_star(STATE_A, 15.0), -15.0);
}

#[test]
fn learns_q_star_and_band_centres() {
    let res = run_toy();
    assert!(res.target_q_error < 0.5, "Q error {}", res.target_q_error);
    assert!(res.policy_error < 5.0, "policy error {}", res.policy_error);
    assert!(res.seconds < 300.0);
}

#[test]
fn training_leaves_memory_untouched() {
    let mem = ReplayMemory::new(&transitions(2)).unwrap();
    let before = mem.clone();
    let config = oxyrl::ddpg::TrainingConfig {
        max_iterations: 200,
        ..toy_config()
    };
    oxyrl::ddpg::train(&mem, &config).unwrap();
    assert_eq!(mem, before);
}
