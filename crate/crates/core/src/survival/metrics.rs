use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{check_samples, CoxModel, SurvivalError, SurvivalSample};

/// Integer pair counts behind Harrell's C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    /// (concordant + ½·tied) / comparable.
    pub fn index(&self) -> Result<f64, SurvivalError> {
        if self.comparable == 0 {
            return Err(SurvivalError::NoComparablePairs);
        }
        Ok((2 * self.concordant + self.tied) as f64 / (2 * self.comparable) as f64)
    }
}

/// Fenwick tree of counts over score ranks.
struct Counts(Vec<u64>);

impl Counts {
    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Entries with rank < `rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut total = 0;
        while i > 0 {
            total += self.0[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// A pair (i, j) is comparable when i died and tⱼ > tᵢ; it is concordant when
/// scoreᵢ > scoreⱼ and tied when the scores are equal. O(n log n).
pub fn concordance_counts(scores: &[f64], durations: &[f64], events: &[bool]) -> Result<ConcordanceCounts, SurvivalError> {
    let n = scores.len();
    if durations.len() != n || events.len() != n {
        return Err(SurvivalError::LengthMismatch(n, durations.len().min(events.len())));
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |s: f64| sorted.partition_point(|v| v.total_cmp(&s).is_lt());

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| durations[b].total_cmp(&durations[a]));
    let mut tree = Counts(vec![0; sorted.len() + 1]);
    let mut inserted = 0u64;
    let mut out = ConcordanceCounts::default();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && durations[order[end]] == durations[order[start]] {
            end += 1;
        }
        for &i in order[start..end].iter().filter(|&&i| events[i]) {
            let r = rank(scores[i]);
            let less = tree.below(r);
            out.concordant += less;
            out.tied += tree.below(r + 1) - less;
            out.comparable += inserted;
        }
        for &i in &order[start..end] {
            tree.add(rank(scores[i]));
        }
        inserted += (end - start) as u64;
        start = end;
    }
    Ok(out)
}

/// Harrell's C of arbitrary risk scores.
pub fn concordance_from_scores(scores: &[f64], durations: &[f64], events: &[bool]) -> Result<f64, SurvivalError> {
    concordance_counts(scores, durations, events)?.index()
}

/// Harrell's C of the model's relative risks exp(sᵀβ).
pub fn concordance_index(model: &CoxModel, samples: &[SurvivalSample]) -> Result<f64, SurvivalError> {
    let p = check_samples(samples)?;
    if p != model.beta.len() {
        return Err(SurvivalError::Dimension {
            expected: model.beta.len(),
            got: p,
        });
    }
    let scores: Vec<f64> = samples.iter().map(|s| model.linear_predictor(&s.covariates).exp()).collect();
    let durations: Vec<f64> = samples.iter().map(|s| s.duration).collect();
    let events: Vec<bool> = samples.iter().map(|s| s.event).collect();
    concordance_from_scores(&scores, &durations, &events)
}

pub fn cosine_similarity(pred: &[f64], actual: &[f64]) -> Result<f64, SurvivalError> {
    if pred.len() != actual.len() {
        return Err(SurvivalError::LengthMismatch(pred.len(), actual.len()));
    }
    let dot: f64 = pred.iter().zip(actual).map(|(a, b)| a * b).sum();
    let na = pred.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = actual.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SurvivalError::UndefinedSimilarity);
    }
    Ok(dot / (na * nb))
}

/// McNemar's test on paired labels: statistic (b − c)²/(b + c) over the
/// discordant counts and its χ²(1) upper-tail p-value.
pub fn paired_binary_test(pred: &[bool], actual: &[bool]) -> Result<(f64, f64), SurvivalError> {
    if pred.len() != actual.len() {
        return Err(SurvivalError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(SurvivalError::Empty);
    }
    let b = pred.iter().zip(actual).filter(|(p, a)| **p && !**a).count() as f64;
    let c = pred.iter().zip(actual).filter(|(p, a)| !**p && **a).count() as f64;
    if b + c == 0.0 {
        return Ok((0.0, 1.0));
    }
    let stat = (b - c) * (b - c) / (b + c);
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok((stat, chi.sf(stat)))
}
