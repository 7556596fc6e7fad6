use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::report::{Comparison, Estimate, FoldSummary, Histogram};
use super::{curve_svg, histogram_svg, EvalError, EvalReport, PatientResult};

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn estimate_cells(e: &Estimate) -> String {
    format!("{},{},{},{}", e.mean, e.se, e.ci_low, e.ci_high)
}

const COMPARISON_HEADER: &str = "rl,rl_se,rl_ci_low,rl_ci_high,\
logged,logged_se,logged_ci_low,logged_ci_high,\
difference,difference_se,difference_ci_low,difference_ci_high,p_value,significant";

fn comparison_cells(c: Option<&Comparison>) -> String {
    match c {
        Some(c) => format!(
            "{},{},{},{},{}",
            estimate_cells(&c.rl),
            estimate_cells(&c.logged),
            estimate_cells(&c.difference),
            c.p_value,
            c.significant
        ),
        None => ",".repeat(COMPARISON_HEADER.matches(',').count()),
    }
}

fn pooled_csv(r: &EvalReport) -> String {
    let mut s = format!("quantity,{COMPARISON_HEADER}\n");
    let _ = writeln!(s, "mortality_7d,{}", comparison_cells(Some(&r.mortality)));
    let _ = writeln!(s, "flow_l_min,{}", comparison_cells(Some(&r.flow)));
    s
}

fn metrics_csv(r: &EvalReport) -> String {
    let m = &r.metrics;
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "patients,{}", r.patients);
    let _ = writeln!(s, "decision_points,{}", r.decision_points);
    let _ = writeln!(s, "consistency_rate,{}", r.consistency);
    let _ = writeln!(s, "concordance,{}", opt(m.concordance));
    let _ = writeln!(s, "cosine_similarity,{}", opt(m.cosine_similarity));
    let _ = writeln!(s, "mcnemar_statistic,{}", m.mcnemar_statistic);
    let _ = writeln!(s, "mcnemar_p,{}", m.mcnemar_p);
    let _ = writeln!(s, "accuracy,{}", m.accuracy);
    s
}

fn subgroups_csv(r: &EvalReport) -> String {
    let prefixed = |p: &str| COMPARISON_HEADER.split(',').map(|c| format!("{p}_{c}")).collect::<Vec<_>>().join(",");
    let mut s = format!("group,patients,{},{}\n", prefixed("mortality"), prefixed("flow"));
    for row in &r.subgroups {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            row.name,
            row.patients,
            comparison_cells(row.mortality.as_ref()),
            comparison_cells(row.flow.as_ref())
        );
    }
    s
}

fn curve_csv(r: &EvalReport) -> String {
    let mut s = String::from(
        "bin_center,bin_low,bin_high,count,low_support,observed_mortality,observed_ci_low,observed_ci_high,\
estimated_mortality,estimated_ci_low,estimated_ci_high\n",
    );
    for b in &r.curve {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            b.center,
            b.low,
            b.high,
            b.count,
            b.low_support,
            b.observed,
            b.observed_ci.0,
            b.observed_ci.1,
            b.estimated,
            b.estimated_ci.0,
            b.estimated_ci.1
        );
    }
    s
}

fn histogram_csv(columns: &[(&str, &Histogram)]) -> String {
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    let mut s = format!("bin_low,bin_high,{}\n", names.join(","));
    let first = columns[0].1;
    for k in 0..first.counts.len() {
        let (lo, hi) = first.edges(k);
        let counts: Vec<String> = columns.iter().map(|c| c.1.counts[k].to_string()).collect();
        let _ = writeln!(s, "{lo},{hi},{}", counts.join(","));
    }
    s
}

fn folds_csv(folds: &[FoldSummary]) -> String {
    let mut s = String::from(
        "hospital,patients,decision_points,mortality_rl,mortality_logged,consistency_rate,concordance,\
beta_flow,beta_flow_per_l_min,l1,l2,training_iterations\n",
    );
    for f in folds {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            f.hospital,
            f.patients,
            f.decision_points,
            f.mortality_rl,
            f.mortality_logged,
            f.consistency,
            opt(f.concordance),
            f.beta_flow,
            f.beta_flow_per_lmin,
            f.l1,
            f.l2,
            f.training_iterations.map_or(String::new(), |i| i.to_string())
        );
    }
    s
}

fn pct(e: &Estimate) -> String {
    format!("{:6.2} ({:.2})", 100.0 * e.mean, 100.0 * e.se)
}

fn flow(e: &Estimate) -> String {
    format!("{:6.2} ({:.2})", e.mean, e.se)
}

/// Plain-text report laid out like a subgroup comparison table.
pub fn summary_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "7-day estimated mortality and oxygen flow, RL policy vs logged (physician) policy"
    );
    let _ = writeln!(s, "{} patients, {} decision points\n", r.patients, r.decision_points);
    let _ = writeln!(
        s,
        "{:<28} {:>6}  {:>16} {:>16}  {:>16} {:>16}",
        "Group", "N", "RL mort. %", "Logged mort. %", "RL flow L/min", "Logged flow"
    );
    for row in &r.subgroups {
        match (&row.mortality, &row.flow) {
            (Some(m), Some(f)) => {
                let _ = writeln!(
                    s,
                    "{:<28} {:>6}  {:>16} {:>15}{}  {:>16} {:>15}{}",
                    row.name,
                    row.patients,
                    pct(&m.rl),
                    pct(&m.logged),
                    if m.significant { "*" } else { " " },
                    flow(&f.rl),
                    flow(&f.logged),
                    if f.significant { "*" } else { " " },
                );
            }
            _ => {
                let _ = writeln!(s, "{:<28} {:>6}  {:>16}", row.name, row.patients, "-");
            }
        }
    }
    let _ = writeln!(s, "\nValues are mean (bootstrap SE); * marks a significant RL − logged difference.\n");
    let m = &r.mortality;
    let _ = writeln!(
        s,
        "Mortality RL      {:.4} [{:.4}, {:.4}]",
        m.rl.mean, m.rl.ci_low, m.rl.ci_high
    );
    let _ = writeln!(
        s,
        "Mortality logged  {:.4} [{:.4}, {:.4}]",
        m.logged.mean, m.logged.ci_low, m.logged.ci_high
    );
    let _ = writeln!(
        s,
        "Difference        {:.4} [{:.4}, {:.4}]  p = {}",
        m.difference.mean, m.difference.ci_low, m.difference.ci_high, m.p_value
    );
    let f = &r.flow;
    let _ = writeln!(
        s,
        "Mean flow RL {:.2} L/min, logged {:.2} L/min, difference {:.2} [{:.2}, {:.2}]",
        f.rl.mean, f.logged.mean, f.difference.mean, f.difference.ci_low, f.difference.ci_high
    );
    let _ = writeln!(s, "Consistency rate  {:.4}", r.consistency);
    let mb = &r.metrics;
    let _ = writeln!(
        s,
        "Outcome model: concordance {}, cosine similarity {}, McNemar {:.4} (p = {}), accuracy {:.4}",
        mb.concordance.map_or("n/a".into(), |c| format!("{c:.4}")),
        mb.cosine_similarity.map_or("n/a".into(), |c| format!("{c:.4}")),
        mb.mcnemar_statistic,
        mb.mcnemar_p,
        mb.accuracy
    );
    if let Some(b) = r.curve_minimum() {
        let _ = writeln!(
            s,
            "Lowest observed mortality among supported bins: difference {} L/min ({} patients, {:.4})",
            b.center, b.count, b.observed
        );
    }
    if !r.folds.is_empty() {
        let _ = writeln!(s, "\nFolds (held-out hospital):");
        for f in &r.folds {
            let _ = writeln!(
                s,
                "  {:<8} {:>5} patients  RL {:.4}  logged {:.4}  consistency {:.4}  beta_flow {:+.4}",
                f.hospital, f.patients, f.mortality_rl, f.mortality_logged, f.consistency, f.beta_flow
            );
        }
    }
    s
}

fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<(), EvalError> {
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        if let Err(source) = std::fs::write(&path, body) {
            for w in &written {
                let _ = std::fs::remove_file(w);
            }
            return Err(EvalError::Io { path, source });
        }
        written.push(path);
    }
    Ok(())
}

/// Writes the CSV set, the text summary and the three figures into `dir`
/// (created if needed). On failure the files written so far are removed.
pub fn write_report(dir: &Path, r: &EvalReport) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = vec![
        ("pooled.csv", pooled_csv(r)),
        ("metrics.csv", metrics_csv(r)),
        ("subgroups.csv", subgroups_csv(r)),
        ("curve.csv", curve_csv(r)),
        (
            "histogram_flow.csv",
            histogram_csv(&[("rl", &r.histogram_rl), ("logged", &r.histogram_logged)]),
        ),
        (
            "histogram_difference.csv",
            histogram_csv(&[("count", &r.histogram_difference)]),
        ),
        ("summary.txt", summary_text(r)),
        ("curve.svg", curve_svg(&r.curve)),
        (
            "histogram_flow.svg",
            histogram_svg(
                "Oxygen flow rate at decision points",
                "Flow rate (L/min)",
                &[("RL", &r.histogram_rl), ("Logged", &r.histogram_logged)],
            ),
        ),
        (
            "histogram_difference.svg",
            histogram_svg(
                "Recommended minus logged flow",
                "Flow difference (L/min)",
                &[("RL - logged", &r.histogram_difference)],
            ),
        ),
    ];
    if !r.folds.is_empty() {
        files.push(("folds.csv", folds_csv(&r.folds)));
    }
    write_all(dir, &files)
}

pub fn write_folds_csv(path: &Path, folds: &[FoldSummary]) -> Result<(), EvalError> {
    std::fs::write(path, folds_csv(folds)).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One row per patient.
pub fn write_patients_csv(path: &Path, patients: &[PatientResult]) -> Result<(), EvalError> {
    let mut s = String::from(
        "patient_id,hospital_id,decision_points,mean_logged_flow,mean_recommended_flow,mean_difference,\
mortality_rl,mortality_logged,died_7d\n",
    );
    for p in patients {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            p.patient_id,
            p.hospital_id,
            p.logged.len(),
            p.mean_logged(),
            p.mean_recommended(),
            p.mean_difference(),
            p.mortality_rl,
            p.mortality_logged,
            u8::from(p.died_7d)
        );
    }
    std::fs::write(path, s).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
