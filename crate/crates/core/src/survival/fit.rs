use super::{check_samples, CoxModel, SurvivalError, SurvivalSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop once the minimum-norm subgradient of the penalized objective
    /// has Euclidean norm below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

/// Samples sorted by decreasing duration, grouped by equal duration.
struct RiskSets {
    x: Vec<f64>,
    event: Vec<bool>,
    time: Vec<f64>,
    /// Half-open row ranges of tied durations, longest first.
    groups: Vec<(usize, usize)>,
    n: usize,
    p: usize,
}

impl RiskSets {
    fn new(samples: &[SurvivalSample], p: usize) -> Self {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[b].duration.total_cmp(&samples[a].duration));
        let x = order.iter().flat_map(|&i| samples[i].covariates.iter().copied()).collect();
        let event = order.iter().map(|&i| samples[i].event).collect();
        let time: Vec<f64> = order.iter().map(|&i| samples[i].duration).collect();
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=time.len() {
            if i == time.len() || time[i] != time[start] {
                groups.push((start, i));
                start = i;
            }
        }
        Self {
            x,
            event,
            time,
            groups,
            n: samples.len(),
            p,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    /// Breslow partial log-likelihood and its gradient, both summed over
    /// events (not averaged).
    fn loglik(&self, beta: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let eta = self.eta(beta);
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; self.p];
        let mut ll = 0.0;
        let mut grad = vec![0.0; if want_grad { self.p } else { 0 }];
        for &(a, b) in &self.groups {
            for i in a..b {
                let w = (eta[i] - shift).exp();
                s0 += w;
                if want_grad {
                    for (s, x) in s1.iter_mut().zip(self.row(i)) {
                        *s += w * x;
                    }
                }
            }
            let log_s0 = s0.ln() + shift;
            for i in (a..b).filter(|&i| self.event[i]) {
                ll += eta[i] - log_s0;
                if want_grad {
                    for ((g, x), s) in grad.iter_mut().zip(self.row(i)).zip(&s1) {
                        *g += x - s / s0;
                    }
                }
            }
        }
        (ll, grad)
    }

    /// Breslow Λ0 at each distinct event time, ascending, from (0, 0).
    fn baseline(&self, beta: &[f64]) -> Vec<(f64, f64)> {
        let eta = self.eta(beta);
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut steps = Vec::new();
        for &(a, b) in &self.groups {
            for e in &eta[a..b] {
                s0 += (e - shift).exp();
            }
            let d = self.event[a..b].iter().filter(|e| **e).count();
            if d > 0 {
                steps.push((self.time[a], d as f64 * (-shift).exp() / s0));
            }
        }
        let mut out = vec![(0.0, 0.0)];
        let mut total = 0.0;
        for (t, inc) in steps.into_iter().rev() {
            total += inc;
            out.push((t, total));
        }
        out
    }
}

/// Σ over events of `sᵢᵀβ − ln Σ_{tⱼ ≥ tᵢ} exp(sⱼᵀβ)` (Breslow ties).
pub fn partial_log_likelihood(samples: &[SurvivalSample], beta: &[f64]) -> Result<f64, SurvivalError> {
    let p = check_samples(samples)?;
    if beta.len() != p {
        return Err(SurvivalError::Dimension {
            expected: p,
            got: beta.len(),
        });
    }
    Ok(RiskSets::new(samples, p).loglik(beta, false).0)
}

/// `−ℓ(β)/n + l1·‖β‖₁ + (l2/2)·‖β‖₂²`, the quantity the fit minimizes.
pub fn penalized_objective(samples: &[SurvivalSample], beta: &[f64], l1: f64, l2: f64) -> Result<f64, SurvivalError> {
    let ll = partial_log_likelihood(samples, beta)?;
    Ok(objective(ll, samples.len(), beta, l1, l2))
}

fn objective(ll: f64, n: usize, beta: &[f64], l1: f64, l2: f64) -> f64 {
    let (abs, sq) = beta.iter().fold((0.0, 0.0), |(a, s), b| (a + b.abs(), s + b * b));
    -ll / n as f64 + l1 * abs + 0.5 * l2 * sq
}

fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Smooth part g(β) = −ℓ/n + (l2/2)‖β‖² and its gradient.
fn smooth(sets: &RiskSets, beta: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let (ll, grad) = sets.loglik(beta, true);
    let n = sets.n as f64;
    let sq: f64 = beta.iter().map(|b| b * b).sum();
    let g = grad.iter().zip(beta).map(|(g, b)| -g / n + l2 * b).collect();
    (-ll / n + 0.5 * l2 * sq, g)
}

fn smooth_value(sets: &RiskSets, beta: &[f64], l2: f64) -> f64 {
    let ll = sets.loglik(beta, false).0;
    -ll / sets.n as f64 + 0.5 * l2 * beta.iter().map(|b| b * b).sum::<f64>()
}

/// Norm of the smallest element of ∂F(β).
fn subgradient_norm(grad: &[f64], beta: &[f64], l1: f64) -> f64 {
    grad.iter()
        .zip(beta)
        .map(|(&g, &b)| {
            let v = if b != 0.0 { g + l1 * b.signum() } else { (g.abs() - l1).max(0.0) };
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// [`fit_cox_traced`] with default options and features named `x1, x2, …`.
/// Debug builds assert that the objective never increased.
pub fn fit_cox(samples: &[SurvivalSample], l1: f64, l2: f64) -> Result<CoxModel, SurvivalError> {
    let (model, trace) = fit_cox_traced(samples, l1, l2, &FitOptions::default())?;
    debug_assert!(
        trace.windows(2).all(|w| w[1] <= w[0]),
        "penalized objective increased during the fit"
    );
    Ok(model)
}

/// Monotone FISTA with backtracking. Returns the model and the penalized
/// objective after every iteration (starting with β = 0).
pub fn fit_cox_traced(
    samples: &[SurvivalSample],
    l1: f64,
    l2: f64,
    options: &FitOptions,
) -> Result<(CoxModel, Vec<f64>), SurvivalError> {
    let p = check_samples(samples)?;
    if !samples.iter().any(|s| s.event) {
        return Err(SurvivalError::NoEvents(samples.len()));
    }
    if !(l1 >= 0.0 && l2 >= 0.0) {
        return Err(SurvivalError::Grid(format!("penalties must be non-negative, got ({l1}, {l2})")));
    }
    let sets = RiskSets::new(samples, p);
    let penalty = |b: &[f64]| l1 * b.iter().map(|v| v.abs()).sum::<f64>();

    let mut beta = vec![0.0; p];
    let (mut g_beta, mut grad_beta) = smooth(&sets, &beta, l2);
    let mut f_beta = g_beta + penalty(&beta);
    let mut trace = vec![f_beta];
    let mut y = beta.clone();
    let mut t = 1.0_f64;
    let mut lipschitz = 1.0_f64;
    let mut converged = subgradient_norm(&grad_beta, &beta, l1) < options.tolerance;
    let mut iterations = 0;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let (g_y, grad_y) = if y == beta { (g_beta, grad_beta.clone()) } else { smooth(&sets, &y, l2) };
        lipschitz = (lipschitz * 0.5).max(1e-12);
        let z = loop {
            let z: Vec<f64> = y
                .iter()
                .zip(&grad_y)
                .map(|(y, g)| soft_threshold(y - g / lipschitz, l1 / lipschitz))
                .collect();
            let (mut lin, mut quad) = (0.0, 0.0);
            for ((z, y), g) in z.iter().zip(&y).zip(&grad_y) {
                lin += g * (z - y);
                quad += (z - y) * (z - y);
            }
            let bound = g_y + lin + 0.5 * lipschitz * quad;
            let g_z = smooth_value(&sets, &z, l2);
            if g_z <= bound + 1e-15 * bound.abs() || quad == 0.0 {
                break z;
            }
            lipschitz *= 2.0;
        };
        let (g_z, grad_z) = smooth(&sets, &z, l2);
        let f_z = g_z + penalty(&z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let previous = beta.clone();
        if f_z <= f_beta {
            beta = z.clone();
            g_beta = g_z;
            grad_beta = grad_z;
            f_beta = f_z;
            y = beta
                .iter()
                .zip(&previous)
                .map(|(b, prev)| b + (t - 1.0) / t_next * (b - prev))
                .collect();
            t = t_next;
        } else {
            // objective went up: keep β, drop the momentum
            y = beta.clone();
            t = 1.0;
        }
        trace.push(f_beta);
        converged = subgradient_norm(&grad_beta, &beta, l1) < options.tolerance;
    }

    let model = CoxModel {
        feature_names: (1..=p).map(|i| format!("x{i}")).collect(),
        baseline_cumhaz: sets.baseline(&beta),
        beta,
        converged,
        iterations,
        l1,
        l2,
    };
    Ok((model, trace))
}
