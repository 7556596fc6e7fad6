use std::collections::HashSet;

use oxyrl::cohort::{generate_synthetic_cohort, FeatureSchema, GeneratorConfig, PatientRecord};
use oxyrl::ddpg::TrainingConfig;
use oxyrl::eval::{
    bootstrap_comparison, build_report, consistency_rate, curve_svg, difference_curve, flow_histograms,
    histogram_svg, loho_cross_validate, loho_folds, run_fold, subgroup_table, write_report, EvalError, EvalOptions,
    EvalReport, FoldResult, FoldSummary, PatientResult,
};

fn small_cohort(n: usize, seed: u64) -> (FeatureSchema, Vec<PatientRecord>) {
    let cfg = GeneratorConfig {
        n_patients: n,
        seed,
        ..Default::default()
    };
    generate_synthetic_cohort(&cfg).unwrap()
}

fn quick_training() -> TrainingConfig {
    TrainingConfig {
        max_iterations: 150,
        ..Default::default()
    }
}

fn quick_options() -> EvalOptions {
    EvalOptions {
        bootstrap_samples: 200,
        ..Default::default()
    }
}

fn pooled(folds: &[FoldResult], schema: &FeatureSchema, options: &EvalOptions) -> EvalReport {
    let patients: Vec<PatientResult> = folds.iter().flat_map(|f| f.patients.clone()).collect();
    let summaries = folds.iter().map(|f| FoldSummary::of(f, options)).collect();
    build_report(&patients, summaries, schema, options).unwrap()
}

#[test]
fn folds_partition_the_cohort_and_hold_out_whole_hospitals() {
    let (schema, recs) = small_cohort(300, 4);
    let folds = loho_cross_validate(&recs, &schema, &quick_training(), &quick_options(), false).unwrap();
    assert_eq!(folds.len(), 4);
    let mut seen = HashSet::new();
    for f in &folds {
        for p in &f.patients {
            assert_eq!(p.hospital_id, f.hospital);
            assert!(seen.insert(p.patient_id.clone()), "{} evaluated twice", p.patient_id);
        }
        let train: HashSet<&String> = f.train_patients.iter().collect();
        for r in &recs {
            assert_eq!(train.contains(&r.patient_id), r.hospital_id != f.hospital);
        }
    }
    assert_eq!(seen.len(), recs.len());
}

#[test]
fn pooled_mortality_is_the_patient_weighted_fold_mean() {
    let (schema, recs) = small_cohort(300, 5);
    let options = quick_options();
    let folds = loho_cross_validate(&recs, &schema, &quick_training(), &options, false).unwrap();
    let report = pooled(&folds, &schema, &options);
    let weighted: f64 = report.folds.iter().map(|f| f.mortality_rl * f.patients as f64).sum::<f64>()
        / report.folds.iter().map(|f| f.patients).sum::<usize>() as f64;
    assert!((report.mortality.rl.mean - weighted).abs() <= 1e-12);
    let weighted: f64 = report.folds.iter().map(|f| f.mortality_logged * f.patients as f64).sum::<f64>()
        / report.patients as f64;
    assert!((report.mortality.logged.mean - weighted).abs() <= 1e-12);
}

#[test]
fn parallel_folds_and_repeat_runs_give_identical_reports() {
    let (schema, recs) = small_cohort(240, 6);
    let options = quick_options();
    let a = loho_cross_validate(&recs, &schema, &quick_training(), &options, false).unwrap();
    let b = loho_cross_validate(&recs, &schema, &quick_training(), &options, true).unwrap();
    assert_eq!(pooled(&a, &schema, &options), pooled(&b, &schema, &options));
}

#[test]
fn single_hospital_cohort_is_rejected() {
    let (schema, mut recs) = small_cohort(40, 1);
    for r in &mut recs {
        r.hospital_id = "only".into();
    }
    let err = loho_cross_validate(&recs, &schema, &quick_training(), &quick_options(), false).unwrap_err();
    match err {
        EvalError::Precondition(m) => assert!(m.contains("exactly 4 hospitals"), "{m}"),
        other => panic!("unexpected {other}"),
    }
}

fn null_report(seed: u64) -> (FeatureSchema, EvalReport) {
    let (schema, recs) = small_cohort(300, seed);
    let options = quick_options();
    let folds: Vec<FoldResult> = loho_folds(&recs)
        .unwrap()
        .iter()
        .map(|f| run_fold(&recs, &schema, f, &quick_training(), &options, true).unwrap())
        .collect();
    let report = pooled(&folds, &schema, &options);
    (schema, report)
}

#[test]
fn null_policy_closes_every_gap() {
    let (_, r) = null_report(8);
    assert_eq!(r.consistency, 1.0);
    for c in [&r.mortality, &r.flow] {
        assert_eq!(c.rl, c.logged);
        assert_eq!(c.difference.mean, 0.0);
        assert_eq!((c.difference.ci_low, c.difference.ci_high), (0.0, 0.0));
        assert!(!c.significant);
    }
    for row in &r.subgroups {
        for c in row.mortality.iter().chain(&row.flow) {
            assert_eq!(c.difference.mean, 0.0, "{}", row.name);
            assert_eq!(c.rl, c.logged);
        }
    }
    for f in &r.folds {
        assert_eq!(f.mortality_rl, f.mortality_logged);
        assert_eq!(f.consistency, 1.0);
    }
    assert_eq!(r.histogram_rl, r.histogram_logged);
    let zero = r.histogram_difference.bin_of(0.0);
    let total = r.histogram_difference.total();
    assert_eq!(r.histogram_difference.counts[zero], total);
    assert_eq!(total as usize, r.decision_points);
    assert!(r.curve.iter().all(|b| b.center == 0.0));
}

#[test]
fn zero_flow_coefficient_makes_policies_indistinguishable() {
    let (schema, recs) = small_cohort(200, 9);
    let folds = loho_folds(&recs).unwrap();
    let fold = run_fold(&recs, &schema, &folds[0], &quick_training(), &quick_options(), false).unwrap();
    let mut outcome = fold.outcome.clone();
    outcome.cox.beta[0] = 0.0;
    let mut moved = false;
    for p in &fold.patients {
        let test: Vec<&PatientRecord> = recs.iter().filter(|r| r.patient_id == p.patient_id).collect();
        let trajs = oxyrl::eval::prepare(&test, &schema, &fold.policy.stats, 4.0).unwrap();
        let res = oxyrl::eval::evaluate_patients(&test, &trajs, &schema, &fold.policy, &outcome).unwrap();
        assert_eq!(res[0].mortality_rl, res[0].mortality_logged);
        moved |= res[0].recommended != res[0].logged;
    }
    assert!(moved);
}

#[test]
fn lowering_flows_lowers_mortality_under_a_positive_flow_coefficient() {
    let (schema, recs) = small_cohort(200, 10);
    let folds = loho_folds(&recs).unwrap();
    let fold = run_fold(&recs, &schema, &folds[1], &quick_training(), &quick_options(), true).unwrap();
    let mut outcome = fold.outcome.clone();
    outcome.cox.beta[0] = outcome.cox.beta[0].abs().max(0.05);
    let test: Vec<&PatientRecord> = folds[1].test.iter().map(|&i| &recs[i]).collect();
    let trajs = oxyrl::eval::prepare(&test, &schema, &fold.policy.stats, 4.0).unwrap();
    let mut base = 0.0;
    let mut lowered = 0.0;
    for t in &trajs {
        let steps = oxyrl::eval::decision_steps(t);
        let states: Vec<&[f64]> = steps.iter().map(|s| s.state.as_slice()).collect();
        let flows: Vec<f64> = steps.iter().map(|s| s.action).collect();
        let down: Vec<f64> = flows.iter().map(|a| a - 5.0).collect();
        let (m0, m1) = (outcome.patient_mortality(&states, &flows), outcome.patient_mortality(&states, &down));
        assert!(m1 < m0 || m0 == 0.0);
        base += m0;
        lowered += m1;
    }
    assert!(lowered < base);
}

fn fake(id: usize, logged: Vec<f64>, recommended: Vec<f64>, died: bool, groups: &[&str]) -> PatientResult {
    PatientResult {
        patient_id: format!("p{id}"),
        hospital_id: "h".into(),
        mortality_rl: 0.01 * (id % 7) as f64,
        mortality_logged: 0.012 * (id % 5) as f64,
        logged,
        recommended,
        died_7d: died,
        groups: groups.iter().map(|g| g.to_string()).collect(),
    }
}

#[test]
fn constant_policy_fills_one_histogram_bin() {
    let ps: Vec<PatientResult> = (0..30)
        .map(|i| fake(i, vec![(i % 60) as f64, 12.5, 59.5], vec![20.0; 3], false, &[]))
        .collect();
    let (rl, logged, diff) = flow_histograms(&ps, 5.0);
    assert_eq!(rl.counts.iter().filter(|c| **c > 0).count(), 1);
    assert_eq!(rl.counts[rl.bin_of(20.0)], 90);
    assert_eq!((logged.total(), diff.total()), (90, 90));
    assert_eq!(logged.counts.len(), 12);
    assert_eq!(diff.counts.len(), 24);
}

#[test]
fn survivor_only_bins_have_zero_observed_mortality() {
    let mut ps: Vec<PatientResult> = (0..12).map(|i| fake(i, vec![30.0], vec![10.0], false, &[])).collect();
    ps.extend((12..20).map(|i| fake(i, vec![10.0], vec![11.0], i % 2 == 0, &[])));
    let c = difference_curve(&ps, 5.0, 10);
    assert_eq!(c.len(), 2);
    assert_eq!((c[0].center, c[0].observed, c[0].count, c[0].low_support), (-20.0, 0.0, 12, false));
    assert_eq!((c[1].center, c[1].observed, c[1].count, c[1].low_support), (0.0, 0.5, 8, true));
    assert_eq!(c[0].observed_ci.0, 0.0);
}

#[test]
fn subgroup_rows_cover_bands_and_allow_overlap() {
    let (schema, recs) = small_cohort(200, 12);
    let options = quick_options();
    let folds = loho_cross_validate(&recs, &schema, &quick_training(), &options, false).unwrap();
    let r = pooled(&folds, &schema, &options);
    let all = &r.subgroups[0];
    assert_eq!(all.name, "All patients");
    assert_eq!(all.patients, r.patients);
    assert_eq!(all.mortality.as_ref(), Some(&r.mortality));
    assert_eq!(all.flow.as_ref(), Some(&r.flow));
    let count = |prefix: &str| -> usize {
        r.subgroups.iter().filter(|g| g.name.starts_with(prefix)).map(|g| g.patients).sum()
    };
    assert_eq!(count("age "), r.patients);
    assert_eq!(count("bmi "), r.patients);
    let sexes: usize = r.subgroups.iter().filter(|g| g.name == "Male" || g.name == "Female").map(|g| g.patients).sum();
    assert_eq!(sexes, r.patients);
    let comorbid: usize = r.subgroups.iter().skip(1 + 2 + 4 + 5).map(|g| g.patients).sum();
    assert!(comorbid > r.patients, "comorbidity rows overlap");
}

#[test]
fn empty_subgroup_gets_a_null_row() {
    let (schema, _) = small_cohort(1, 1);
    let ps: Vec<PatientResult> =
        (0..5).map(|i| fake(i, vec![10.0], vec![8.0], false, &["All patients", "Female"])).collect();
    let rows = subgroup_table(&ps, &schema, &quick_options()).unwrap();
    let male = rows.iter().find(|r| r.name == "Male").unwrap();
    assert_eq!((male.patients, male.mortality, male.flow), (0, None, None));
    let female = rows.iter().find(|r| r.name == "Female").unwrap();
    assert_eq!(female.patients, 5);
    assert!(female.flow.unwrap().difference.mean == -2.0);
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let rl: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 100.0).collect();
    let lg: Vec<f64> = (0..50).map(|i| ((i * 13) % 9) as f64 / 80.0).collect();
    let a = bootstrap_comparison(&rl, &lg, 500, 42, 0.001).unwrap();
    let b = bootstrap_comparison(&rl, &lg, 500, 42, 0.001).unwrap();
    let c = bootstrap_comparison(&rl, &lg, 500, 43, 0.001).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.rl.ci_low, c.rl.ci_low);
    assert!(a.rl.ci_low <= a.rl.mean && a.rl.mean <= a.rl.ci_high);
    assert!(bootstrap_comparison(&[], &[], 10, 1, 0.001).is_err());
}

#[test]
fn consistency_counts_decision_points_not_patients() {
    let ps = vec![
        fake(0, vec![0.0; 3], vec![1.0, 2.0, 30.0], false, &[]),
        fake(1, vec![0.0], vec![50.0], false, &[]),
    ];
    assert_eq!(consistency_rate(&ps, 10.0), Some(0.5));
}

#[test]
fn figures_are_valid_svg_with_one_element_per_bin() {
    let ps: Vec<PatientResult> = (0..40)
        .map(|i| fake(i, vec![(i % 50) as f64 + 5.0], vec![25.0], i % 4 == 0, &[]))
        .collect();
    let curve = difference_curve(&ps, 5.0, 10);
    let svg = curve_svg(&curve);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let bins: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("bin")).collect();
    assert_eq!(bins.len(), curve.len());
    for (n, b) in bins.iter().zip(&curve) {
        assert_eq!(n.attribute("data-center").unwrap().parse::<f64>().unwrap(), b.center);
        assert_eq!(n.attribute("data-count").unwrap().parse::<usize>().unwrap(), b.count);
    }
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("x-label")));

    let (rl, logged, _) = flow_histograms(&ps, 5.0);
    let svg = histogram_svg("flows", "L/min", &[("RL", &rl), ("Logged", &logged)]);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let rects: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("bin")).collect();
    assert_eq!(rects.len(), 2 * rl.counts.len());
    let total: u64 = rects.iter().map(|n| n.attribute("data-count").unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, rl.total() + logged.total());
    let ticks = doc.descendants().filter(|n| n.attribute("class") == Some("x-tick")).count();
    assert_eq!(ticks, rl.counts.len() + 1);
}

#[test]
fn report_files_are_written_and_well_formed() {
    let (schema, r) = null_report(13);
    let dir = std::env::temp_dir().join(format!("oxyrl-report-{}", std::process::id()));
    write_report(&dir, &r).unwrap();
    for name in [
        "pooled.csv",
        "metrics.csv",
        "subgroups.csv",
        "curve.csv",
        "histogram_flow.csv",
        "histogram_difference.csv",
        "folds.csv",
        "summary.txt",
        "curve.svg",
        "histogram_flow.svg",
        "histogram_difference.svg",
    ] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    for name in ["pooled.csv", "subgroups.csv", "curve.csv", "histogram_flow.csv", "folds.csv"] {
        let text = std::fs::read_to_string(dir.join(name)).unwrap();
        let widths: HashSet<usize> = text.lines().map(|l| l.split(',').count()).collect();
        assert_eq!(widths.len(), 1, "{name} has ragged rows");
        assert!(!text.contains('\r'));
    }
    let subgroups = std::fs::read_to_string(dir.join("subgroups.csv")).unwrap();
    assert_eq!(subgroups.lines().count(), 1 + oxyrl::eval::subgroups(&schema).len());
    let hist = std::fs::read_to_string(dir.join("histogram_difference.csv")).unwrap();
    let total: u64 = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total as usize, r.decision_points);
    std::fs::remove_dir_all(dir).unwrap();
}
