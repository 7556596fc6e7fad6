use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{concordance_index, fit_cox, CoxModel, SurvivalError, SurvivalSample};
use crate::par;

/// Greedy pass in column order: a column is dropped when its absolute
/// Pearson correlation with an already retained column exceeds
/// `threshold`. A zero-variance column correlates 0 with everything.
pub fn prune_correlated(data: &Array2<f64>, names: &[String], threshold: f64) -> Result<Vec<String>, SurvivalError> {
    let (n, p) = data.dim();
    if names.len() != p {
        return Err(SurvivalError::Dimension {
            expected: p,
            got: names.len(),
        });
    }
    if n < 2 {
        return Err(SurvivalError::Grid(format!("correlation pruning needs 2 samples, got {n}")));
    }
    let centered: Vec<(Vec<f64>, f64)> = (0..p)
        .map(|j| {
            let col = data.column(j);
            let mean = col.sum() / n as f64;
            let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let corr = |a: usize, b: usize| {
        let ((ca, na), (cb, nb)) = (&centered[a], &centered[b]);
        if *na == 0.0 || *nb == 0.0 {
            return 0.0;
        }
        ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
    };
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..p {
        if kept.iter().all(|&k| corr(j, k).abs() <= threshold) {
            kept.push(j);
        }
    }
    Ok(kept.into_iter().map(|j| names[j].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetGrid {
    pub l1_values: Vec<f64>,
    pub l2_values: Vec<f64>,
}

impl Default for ElasticNetGrid {
    fn default() -> Self {
        let v = vec![0.01, 0.02, 0.04, 0.06, 0.08];
        Self {
            l1_values: v.clone(),
            l2_values: v,
        }
    }
}

impl ElasticNetGrid {
    /// Every (l1, l2) pair, ascending in l1 and then l2.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .l1_values
            .iter()
            .flat_map(|&a| self.l2_values.iter().map(move |&b| (a, b)))
            .collect();
        out.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub l1: f64,
    pub l2: f64,
    pub concordance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub l1: f64,
    pub l2: f64,
    pub model: CoxModel,
    /// One row per fit, in [`ElasticNetGrid::pairs`] order.
    pub rows: Vec<GridRow>,
}

/// Fits every pair on `train` and scores validation concordance. The
/// highest-scoring converged fit wins; ties go to the smaller l1, then the
/// smaller l2.
pub fn grid_search(
    train: &[SurvivalSample],
    val: &[SurvivalSample],
    grid: &ElasticNetGrid,
) -> Result<GridSearch, SurvivalError> {
    let pairs = grid.pairs();
    if pairs.is_empty() {
        return Err(SurvivalError::Grid("empty penalty grid".into()));
    }
    let fits = par::map(&pairs, |&(l1, l2)| -> Result<(CoxModel, f64), SurvivalError> {
        let model = fit_cox(train, l1, l2)?;
        let c = concordance_index(&model, val)?;
        Ok((model, c))
    });
    let mut rows = Vec::with_capacity(pairs.len());
    let mut models = Vec::with_capacity(pairs.len());
    for (&(l1, l2), fit) in pairs.iter().zip(fits) {
        let (model, concordance) = fit?;
        rows.push(GridRow {
            l1,
            l2,
            concordance,
            converged: model.converged,
        });
        models.push(model);
    }
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.converged && best.is_none_or(|b| r.concordance > rows[b].concordance) {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| SurvivalError::Grid(format!("none of the {} fits converged", rows.len())))?;
    Ok(GridSearch {
        l1: rows[best].l1,
        l2: rows[best].l2,
        model: models.swap_remove(best),
        rows,
    })
}

/// `l1,l2,concordance,converged`, one row per fit.
pub fn write_grid_report(path: &Path, rows: &[GridRow]) -> Result<(), SurvivalError> {
    let mut out = String::from("l1,l2,concordance,converged\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.l1, r.l2, r.concordance, r.converged);
    }
    std::fs::write(path, out).map_err(|source| SurvivalError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: usize) -> Vec<String> {
        (1..=p).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn identical_columns_drop_the_second() {
        let data = Array2::from_shape_fn((6, 2), |(i, _)| (i * i) as f64);
        assert_eq!(prune_correlated(&data, &names(2), 0.7).unwrap(), vec!["f1"]);
    }

    #[test]
    fn constant_column_is_kept() {
        let data = Array2::from_shape_fn((5, 2), |(i, j)| if j == 0 { i as f64 } else { 3.0 });
        assert_eq!(prune_correlated(&data, &names(2), 0.7).unwrap(), names(2));
    }

    #[test]
    fn grid_pairs_are_sorted() {
        let g = ElasticNetGrid {
            l1_values: vec![0.04, 0.02],
            l2_values: vec![0.02, 0.01],
        };
        assert_eq!(g.pairs(), vec![(0.02, 0.01), (0.02, 0.02), (0.04, 0.01), (0.04, 0.02)]);
        assert_eq!(ElasticNetGrid::default().pairs().len(), 25);
    }
}
