use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean, subgroups, EvalError, EvalOptions, FoldResult, PatientResult};
use crate::cohort::{FeatureSchema, MAX_FLOW};
use crate::par;
use crate::survival::{cosine_similarity, paired_binary_test};

/// Two-sided 97.5% standard normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard deviation of the bootstrap replicates.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// RL vs logged on one per-patient quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rl: Estimate,
    pub logged: Estimate,
    /// RL − logged.
    pub difference: Estimate,
    /// Two-sided bootstrap p-value of the difference.
    pub p_value: f64,
    pub significant: bool,
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn estimate(point: f64, mut replicates: Vec<f64>) -> Estimate {
    let m = mean(&replicates);
    let se = if replicates.len() > 1 {
        (replicates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (replicates.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    replicates.sort_by(f64::total_cmp);
    Estimate {
        mean: point,
        se,
        ci_low: quantile(&replicates, 0.025),
        ci_high: quantile(&replicates, 0.975),
    }
}

/// Patient-level percentile bootstrap of the means of `rl`, `logged` and
/// their difference. Resample b draws from ChaCha stream b of `seed`, so
/// replicates do not depend on scheduling.
pub fn bootstrap_comparison(
    rl: &[f64],
    logged: &[f64],
    samples: usize,
    seed: u64,
    significance_level: f64,
) -> Result<Comparison, EvalError> {
    let n = rl.len();
    if n == 0 || samples == 0 {
        return Err(EvalError::Empty);
    }
    if logged.len() != n {
        return Err(EvalError::Precondition(format!("{n} RL values vs {} logged", logged.len())));
    }
    let reps: Vec<(f64, f64, f64)> = par::map_range(samples, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let (mut sr, mut sl, mut sd) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            sr += rl[i];
            sl += logged[i];
            sd += rl[i] - logged[i];
        }
        (sr / n as f64, sl / n as f64, sd / n as f64)
    });
    let diffs: Vec<f64> = reps.iter().map(|r| r.2).collect();
    let below = diffs.iter().filter(|d| **d <= 0.0).count();
    let above = diffs.iter().filter(|d| **d >= 0.0).count();
    let p_value = (2.0 * below.min(above) as f64 / samples as f64).min(1.0);
    let point_diff = rl.iter().zip(logged).map(|(r, l)| r - l).sum::<f64>() / n as f64;
    Ok(Comparison {
        rl: estimate(mean(rl), reps.iter().map(|r| r.0).collect()),
        logged: estimate(mean(logged), reps.iter().map(|r| r.1).collect()),
        difference: estimate(point_diff, diffs),
        p_value,
        significant: p_value < significance_level,
    })
}

/// Share of decision points with |recommended − logged| < `threshold`.
/// `None` without decision points.
pub fn consistency_rate(patients: &[PatientResult], threshold: f64) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for p in patients {
        for (r, l) in p.recommended.iter().zip(&p.logged) {
            total += 1;
            if (r - l).abs() < threshold {
                hit += 1;
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// One bin of the mortality-vs-difference curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub center: f64,
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub low_support: bool,
    /// Share of the bin's patients who died within 7 days.
    pub observed: f64,
    /// Wilson 95% interval of `observed`.
    pub observed_ci: (f64, f64),
    /// Mean model-estimated 7-day mortality under the logged flows.
    pub estimated: f64,
    /// Normal 95% interval of `estimated`.
    pub estimated_ci: (f64, f64),
}

fn wilson(deaths: usize, n: usize) -> (f64, f64) {
    let (k, n) = (deaths as f64, n as f64);
    let p = k / n;
    let z2 = Z95 * Z95;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if deaths == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Patients binned by their mean (recommended − logged) flow. Bin k covers
/// [(k − ½)·width, (k + ½)·width) with k = round(d / width), so bin 0
/// contains zero difference.
pub fn difference_curve(patients: &[PatientResult], width: f64, min_count: usize) -> Vec<CurveBin> {
    let mut bins: std::collections::BTreeMap<i64, Vec<&PatientResult>> = Default::default();
    for p in patients {
        let k = (p.mean_difference() / width + 0.5).floor() as i64;
        bins.entry(k).or_default().push(p);
    }
    bins.into_iter()
        .map(|(k, ps)| {
            let n = ps.len();
            let deaths = ps.iter().filter(|p| p.died_7d).count();
            let est: Vec<f64> = ps.iter().map(|p| p.mortality_logged).collect();
            let m = mean(&est);
            let half = if n > 1 {
                Z95 * (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
            } else {
                0.0
            };
            let center = k as f64 * width;
            CurveBin {
                center,
                low: center - 0.5 * width,
                high: center + 0.5 * width,
                count: n,
                low_support: n < min_count,
                observed: deaths as f64 / n as f64,
                observed_ci: wilson(deaths, n),
                estimated: m,
                estimated_ci: ((m - half).max(0.0), (m + half).min(1.0)),
            }
        })
        .collect()
}

/// Fixed-width histogram over [low, high]; the top edge falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(low: f64, high: f64, width: f64) -> Self {
        let bins = ((high - low) / width - 1e-9).ceil().max(1.0) as usize;
        Self {
            low,
            high,
            width,
            counts: vec![0; bins],
        }
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let k = ((v - self.low) / self.width).floor();
        (k.max(0.0) as usize).min(self.counts.len() - 1)
    }

    pub fn add(&mut self, v: f64) {
        debug_assert!(v >= self.low - 1e-9 && v <= self.high + 1e-9, "{v} outside histogram range");
        let k = self.bin_of(v);
        self.counts[k] += 1;
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let lo = self.low + k as f64 * self.width;
        (lo, (lo + self.width).min(self.high))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// RL and logged flows over [0, 60] and their differences over [−60, 60],
/// one count per decision point.
pub fn flow_histograms(patients: &[PatientResult], width: f64) -> (Histogram, Histogram, Histogram) {
    let mut rl = Histogram::new(0.0, MAX_FLOW, width);
    let mut logged = Histogram::new(0.0, MAX_FLOW, width);
    let mut diff = Histogram::new(-MAX_FLOW, MAX_FLOW, width);
    for p in patients {
        for (r, l) in p.recommended.iter().zip(&p.logged) {
            rl.add(*r);
            logged.add(*l);
            diff.add(r - l);
        }
    }
    (rl, logged, diff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub name: String,
    pub patients: usize,
    /// `None` for an empty subgroup.
    pub mortality: Option<Comparison>,
    pub flow: Option<Comparison>,
}

/// One row per subgroup of `schema`, in definition order.
pub fn subgroup_table(
    patients: &[PatientResult],
    schema: &FeatureSchema,
    options: &EvalOptions,
) -> Result<Vec<SubgroupRow>, EvalError> {
    subgroups(schema)
        .into_iter()
        .map(|g| {
            let members: Vec<&PatientResult> = patients.iter().filter(|p| p.groups.contains(&g.name)).collect();
            if members.is_empty() {
                return Ok(SubgroupRow {
                    name: g.name,
                    patients: 0,
                    mortality: None,
                    flow: None,
                });
            }
            let (mortality, flow) = compare(&members, options)?;
            Ok(SubgroupRow {
                name: g.name,
                patients: members.len(),
                mortality: Some(mortality),
                flow: Some(flow),
            })
        })
        .collect()
}

fn compare(patients: &[&PatientResult], o: &EvalOptions) -> Result<(Comparison, Comparison), EvalError> {
    let rl: Vec<f64> = patients.iter().map(|p| p.mortality_rl).collect();
    let lg: Vec<f64> = patients.iter().map(|p| p.mortality_logged).collect();
    let mortality = bootstrap_comparison(&rl, &lg, o.bootstrap_samples, o.bootstrap_seed, o.significance_level)?;
    let rl: Vec<f64> = patients.iter().map(|p| p.mean_recommended()).collect();
    let lg: Vec<f64> = patients.iter().map(|p| p.mean_logged()).collect();
    let flow = bootstrap_comparison(&rl, &lg, o.bootstrap_samples, o.bootstrap_seed, o.significance_level)?;
    Ok((mortality, flow))
}

/// Outcome-model validation on the evaluated patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    /// Mean of the per-fold test concordances.
    pub concordance: Option<f64>,
    /// Predicted (logged-flow) vs actual 7-day survival vectors.
    pub cosine_similarity: Option<f64>,
    pub mcnemar_statistic: f64,
    pub mcnemar_p: f64,
    /// Agreement of predicted and actual 7-day death labels.
    pub accuracy: f64,
}

fn metric_block(patients: &[PatientResult], concordances: &[f64], threshold: f64) -> Result<MetricBlock, EvalError> {
    let predicted: Vec<f64> = patients.iter().map(|p| 1.0 - p.mortality_logged).collect();
    let actual: Vec<f64> = patients.iter().map(|p| if p.died_7d { 0.0 } else { 1.0 }).collect();
    let pred_labels: Vec<bool> = patients.iter().map(|p| p.mortality_logged >= threshold).collect();
    let labels: Vec<bool> = patients.iter().map(|p| p.died_7d).collect();
    let (stat, p) = paired_binary_test(&pred_labels, &labels)?;
    let agree = pred_labels.iter().zip(&labels).filter(|(a, b)| a == b).count();
    Ok(MetricBlock {
        concordance: (!concordances.is_empty()).then(|| mean(concordances)),
        cosine_similarity: cosine_similarity(&predicted, &actual).ok(),
        mcnemar_statistic: stat,
        mcnemar_p: p,
        accuracy: agree as f64 / patients.len() as f64,
    })
}

/// Per-fold line of a LOHO report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub hospital: String,
    pub patients: usize,
    pub decision_points: usize,
    pub mortality_rl: f64,
    pub mortality_logged: f64,
    pub consistency: f64,
    pub concordance: Option<f64>,
    /// Cox coefficient of the standardized flow coordinate.
    pub beta_flow: f64,
    /// The same coefficient per L/min.
    pub beta_flow_per_lmin: f64,
    pub l1: f64,
    pub l2: f64,
    pub training_iterations: Option<usize>,
}

impl FoldSummary {
    pub fn of(fold: &FoldResult, options: &EvalOptions) -> Self {
        let ps = &fold.patients;
        let beta_flow = fold.outcome.cox.beta[0];
        Self {
            hospital: fold.hospital.clone(),
            patients: ps.len(),
            decision_points: ps.iter().map(|p| p.logged.len()).sum(),
            mortality_rl: mean(&ps.iter().map(|p| p.mortality_rl).collect::<Vec<_>>()),
            mortality_logged: mean(&ps.iter().map(|p| p.mortality_logged).collect::<Vec<_>>()),
            consistency: consistency_rate(ps, options.consistency_threshold).unwrap_or(f64::NAN),
            concordance: fold.concordance,
            beta_flow,
            beta_flow_per_lmin: beta_flow / fold.outcome.design.flow_sd,
            l1: fold.outcome.cox.l1,
            l2: fold.outcome.cox.l2,
            training_iterations: fold.training_log.as_ref().map(|l| l.iterations),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub patients: usize,
    pub decision_points: usize,
    pub mortality: Comparison,
    pub flow: Comparison,
    pub consistency: f64,
    pub subgroups: Vec<SubgroupRow>,
    pub curve: Vec<CurveBin>,
    pub histogram_rl: Histogram,
    pub histogram_logged: Histogram,
    pub histogram_difference: Histogram,
    pub metrics: MetricBlock,
    pub folds: Vec<FoldSummary>,
}

impl EvalReport {
    /// The supported curve bin with the lowest observed mortality.
    pub fn curve_minimum(&self) -> Option<&CurveBin> {
        self.curve
            .iter()
            .filter(|b| !b.low_support)
            .min_by(|a, b| a.observed.total_cmp(&b.observed))
    }
}

/// Pools `patients` (each evaluated exactly once) into a report.
pub fn build_report(
    patients: &[PatientResult],
    folds: Vec<FoldSummary>,
    schema: &FeatureSchema,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    options.validate()?;
    if patients.is_empty() {
        return Err(EvalError::Empty);
    }
    let all: Vec<&PatientResult> = patients.iter().collect();
    let (mortality, flow) = compare(&all, options)?;
    let (histogram_rl, histogram_logged, histogram_difference) = flow_histograms(patients, options.histogram_bin_width);
    let concordances: Vec<f64> = folds.iter().filter_map(|f| f.concordance).collect();
    Ok(EvalReport {
        patients: patients.len(),
        decision_points: patients.iter().map(|p| p.logged.len()).sum(),
        mortality,
        flow,
        consistency: consistency_rate(patients, options.consistency_threshold).ok_or(EvalError::Empty)?,
        subgroups: subgroup_table(patients, schema, options)?,
        curve: difference_curve(patients, options.curve_bin_width, options.min_bin_count),
        histogram_rl,
        histogram_logged,
        histogram_difference,
        metrics: metric_block(patients, &concordances, options.label_threshold)?,
        folds,
    })
}
