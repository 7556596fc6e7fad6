//! Independent oracles for the Cox fitter: a double-loop partial
//! likelihood, a refining grid maximizer and a brute-force pair counter.
#![allow(dead_code)]

use oxyrl::survival::{fit_cox_traced, grid_search, ElasticNetGrid, FitOptions, GridRow, SurvivalSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

/// Breslow partial log-likelihood straight from its definition.
pub fn brute_loglik(samples: &[SurvivalSample], beta: &[f64]) -> f64 {
    let eta = |s: &SurvivalSample| s.covariates.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
    let mut ll = 0.0;
    for i in samples.iter().filter(|s| s.event) {
        let risk: f64 = samples
            .iter()
            .filter(|j| j.duration >= i.duration)
            .map(|j| eta(j).exp())
            .sum();
        ll += eta(i) - risk.ln();
    }
    ll
}

fn grid_points(center: &[f64], half_width: f64, step: f64) -> Vec<Vec<f64>> {
    let k = (half_width / step).round() as i64;
    let axis: Vec<f64> = (-k..=k).map(|i| i as f64 * step).collect();
    let mut points = vec![vec![]];
    for &c in center {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |d| {
                    let mut q = p.clone();
                    q.push(c + d);
                    q
                })
            })
            .collect();
    }
    points
}

fn argmax(samples: &[SurvivalSample], points: Vec<Vec<f64>>) -> Vec<f64> {
    points
        .into_iter()
        .map(|b| (brute_loglik(samples, &b), b))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
        .1
}

pub const BOX: f64 = 6.0;

/// Grid maximizer of the partial likelihood on [−6, 6]^p, refined by
/// factors of 10 down to a 1e-6 step. `None` when the coarse maximum sits
/// within 0.5 of the box edge (no interior maximizer).
pub fn brute_force_beta(samples: &[SurvivalSample], p: usize) -> Option<Vec<f64>> {
    let mut step = 0.02;
    let mut best = argmax(samples, grid_points(&vec![0.0; p], BOX, step));
    if best.iter().any(|b| b.abs() > BOX - 0.5) {
        return None;
    }
    while step > 1e-6 {
        best = argmax(samples, grid_points(&best, 2.0 * step, step / 10.0));
        step /= 10.0;
    }
    Some(best)
}

/// Random dataset with n ≤ 10, p ≤ 2, tied integer durations, and an
/// interior maximizer, with its grid oracle.
pub fn micro_dataset(rng: &mut ChaCha8Rng) -> (Vec<SurvivalSample>, Vec<f64>) {
    loop {
        let n = rng.random_range(4..=10);
        let p = rng.random_range(1..=2);
        let samples: Vec<SurvivalSample> = (0..n)
            .map(|_| {
                SurvivalSample::new(
                    (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(1..=6) as f64,
                    rng.random_bool(0.7),
                )
            })
            .collect();
        if !samples.iter().any(|s| s.event) {
            continue;
        }
        if let Some(beta) = brute_force_beta(&samples, p) {
            return (samples, beta);
        }
    }
}

pub struct OracleRun {
    pub max_error: f64,
    pub monotone: bool,
    pub converged: bool,
}

/// Fits `count` micro-datasets without penalty and compares with the grid.
pub fn cox_oracle(seed: u64, count: usize) -> OracleRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = OracleRun {
        max_error: 0.0,
        monotone: true,
        converged: true,
    };
    for _ in 0..count {
        let (samples, want) = micro_dataset(&mut rng);
        let (model, trace) = fit_cox_traced(&samples, 0.0, 0.0, &FitOptions::default()).unwrap();
        for (b, w) in model.beta.iter().zip(&want) {
            run.max_error = run.max_error.max((b - w).abs());
        }
        run.monotone &= trace.windows(2).all(|w| w[1] <= w[0]);
        run.converged &= model.converged;
    }
    run
}

/// (concordant, tied, comparable) by visiting every ordered pair.
pub fn brute_pairs(scores: &[f64], durations: &[f64], events: &[bool]) -> (u64, u64, u64) {
    let (mut c, mut t, mut m) = (0, 0, 0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if events[i] && durations[i] < durations[j] {
                m += 1;
                if scores[i] > scores[j] {
                    c += 1;
                } else if scores[i] == scores[j] {
                    t += 1;
                }
            }
        }
    }
    (c, t, m)
}

/// Cox data with exponential event times at rate exp(xᵀβ)/10 days and
/// exponential censoring.
pub fn cox_data(rng: &mut ChaCha8Rng, n: usize, beta: &[f64]) -> Vec<SurvivalSample> {
    let censor = Exp::new(1.0 / 15.0).unwrap();
    (0..n)
        .map(|_| {
            let x: Vec<f64> = beta.iter().map(|_| StandardNormal.sample(rng)).collect();
            let rate = 0.1 * x.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>().exp();
            let t = Exp::new(rate).unwrap().sample(rng);
            let c = censor.sample(rng);
            SurvivalSample::new(x, t.min(c), t <= c)
        })
        .collect()
}

pub struct GridAudit {
    pub rows: Vec<GridRow>,
    pub selected: (f64, f64),
    /// Argmax of the recorded table under the tie-break, computed here.
    pub expected: (f64, f64),
}

/// Grid search on sparse-β data, audited against its own score table.
pub fn grid_audit(seed: u64) -> GridAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = [0.8, 0.0, -0.6, 0.0, 0.0, 0.3];
    let train = cox_data(&mut rng, 300, &beta);
    let val = cox_data(&mut rng, 150, &beta);
    let result = grid_search(&train, &val, &ElasticNetGrid::default()).unwrap();
    let mut expected: Option<&GridRow> = None;
    for r in result.rows.iter().filter(|r| r.converged) {
        let better = match expected {
            None => true,
            Some(e) => {
                r.concordance > e.concordance
                    || (r.concordance == e.concordance && (r.l1, r.l2) < (e.l1, e.l2))
            }
        };
        if better {
            expected = Some(r);
        }
    }
    let e = expected.unwrap();
    GridAudit {
        selected: (result.l1, result.l2),
        expected: (e.l1, e.l2),
        rows: result.rows,
    }
}
