use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oxyrl::cohort::{load_cohort, FeatureSchema};
use oxyrl::ddpg::{recommend, PolicyCheckpoint};
use oxyrl::eval::train_policy;
use oxyrl::TrainingConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oxyrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oxyrl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = oxyrl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Cohort {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Cohort {
    fn new(n: usize, extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let out = root.join("gen");
        let n = n.to_string();
        let mut args = vec!["generate", "--out", p(&out), "--seed", "5", "--n_patients", &n];
        args.extend_from_slice(extra);
        ok(&args);
        Self { _dir: dir, root }
    }

    fn cohort(&self) -> PathBuf {
        self.root.join("gen/cohort.csv")
    }

    fn schema(&self) -> PathBuf {
        self.root.join("gen/schema.txt")
    }

    fn inputs(&self) -> Vec<String> {
        vec![
            "--cohort".into(),
            self.cohort().display().to_string(),
            "--schema".into(),
            self.schema().display().to_string(),
        ]
    }

    fn run(&self, sub: &str, out: &str, extra: &[&str]) -> Output {
        let out = self.root.join(out).display().to_string();
        let inputs = self.inputs();
        let mut args: Vec<&str> = vec![sub, "--out", &out];
        args.extend(inputs.iter().map(String::as_str));
        args.extend_from_slice(extra);
        oxyrl(&args)
    }
}

fn csv_column(path: &Path, column: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == column).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

#[test]
fn generate_round_trips_and_rejects_empty_cohorts() {
    let c = Cohort::new(60, &[]);
    let schema = FeatureSchema::read(&c.schema()).unwrap();
    assert_eq!(load_cohort(&c.cohort(), &schema).unwrap().len(), 60);
    let bytes = std::fs::read(c.cohort()).unwrap();
    assert!(!bytes.contains(&b'\r'));

    let empty = c.root.join("empty");
    let out = oxyrl(&["generate", "--out", p(&empty), "--n_patients", "0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("config:"), "{}", stderr(&out));
    assert!(!empty.exists());
}

#[test]
fn train_logs_each_iteration_and_reloads_exactly() {
    let c = Cohort::new(120, &[]);
    let out = c.run("train", "train", &["--max_iterations", "10", "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(c.root.join("train/training_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iteration,td_mse,consistency_mse"));
    assert_eq!(log.lines().count(), 1 + 10);

    let schema = FeatureSchema::read(&c.schema()).unwrap();
    let records = load_cohort(&c.cohort(), &schema).unwrap();
    let refs: Vec<_> = records.iter().collect();
    let config = TrainingConfig {
        max_iterations: 10,
        seed: 3,
        ..Default::default()
    };
    let (fresh, _, _) = train_policy(&refs, &schema, &config).unwrap();
    let loaded = PolicyCheckpoint::read(&c.root.join("train/policy.json")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let s: Vec<f64> = (0..schema.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (a, b) = (recommend(&fresh.agent.actor, &s).unwrap(), recommend(&loaded.agent.actor, &s).unwrap());
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn missing_schema_is_a_load_error() {
    let c = Cohort::new(20, &[]);
    let out = oxyrl(&[
        "train",
        "--cohort",
        p(&c.cohort()),
        "--schema",
        p(&c.root.join("missing.txt")),
        "--out",
        p(&c.root.join("t")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: load:"), "{}", stderr(&out));
    assert!(!c.root.join("t").exists());
}

#[test]
fn flags_override_the_config_file_which_overrides_defaults() {
    let c = Cohort::new(80, &[]);
    let cfg = c.root.join("run.cfg");
    std::fs::write(&cfg, "# shared settings\nmax_iterations = 12\nn_patients = 80\n").unwrap();
    let rows = |dir: &str| std::fs::read_to_string(c.root.join(dir).join("training_log.csv")).unwrap().lines().count() - 1;

    let out = c.run("train", "file", &["--config", p(&cfg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(rows("file"), 12);
    let out = c.run("train", "flag", &["--config", p(&cfg), "--max_iterations", "7"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(rows("flag"), 7);
    let used = std::fs::read_to_string(c.root.join("flag/config.txt")).unwrap();
    assert!(used.contains("max_iterations = 7"));

    std::fs::write(&cfg, "max_iteratons = 12\n").unwrap();
    let out = c.run("train", "typo", &["--config", p(&cfg)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown configuration keys: max_iteratons"), "{}", stderr(&out));
    assert!(!c.root.join("typo").exists());
}

#[test]
fn evaluate_writes_the_report_and_null_policy_is_fully_consistent() {
    let c = Cohort::new(300, &[]);
    assert!(c.run("train", "null", &["--null-policy"]).status.success());
    let out = oxyrl(&[
        "evaluate",
        "--cohort",
        p(&c.cohort()),
        "--schema",
        p(&c.schema()),
        "--checkpoint",
        p(&c.root.join("null/policy.json")),
        "--out",
        p(&c.root.join("eval")),
        "--bootstrap_samples",
        "100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dir = c.root.join("eval");
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l == "consistency_rate,1"), "{metrics}");
    for col in ["difference", "difference_ci_low", "difference_ci_high"] {
        assert!(csv_column(&dir.join("pooled.csv"), col).iter().all(|v| v == "0"));
    }

    let bins = csv_column(&dir.join("curve.csv"), "count").len();
    let svg = std::fs::read_to_string(dir.join("curve.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("bin")).count(), bins);
    for (name, series) in [("histogram_flow", 2), ("histogram_difference", 1)] {
        let rows = csv_column(&dir.join(format!("{name}.csv")), "bin_low");
        let svg = std::fs::read_to_string(dir.join(format!("{name}.svg"))).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let lows: Vec<&str> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("bin"))
            .map(|n| n.attribute("data-low").unwrap())
            .collect();
        assert_eq!(lows.len(), series * rows.len(), "{name}");
        assert!(rows.iter().all(|r| lows.contains(&r.as_str())), "{name}");
        assert!(doc.descendants().any(|n| n.attribute("class") == Some("x-label")));
    }
}

#[test]
fn failed_evaluation_leaves_no_outputs() {
    let c = Cohort::new(60, &[]);
    std::fs::write(c.root.join("bad.json"), "{}").unwrap();
    let out = oxyrl(&[
        "evaluate",
        "--cohort",
        p(&c.cohort()),
        "--schema",
        p(&c.schema()),
        "--checkpoint",
        p(&c.root.join("bad.json")),
        "--out",
        p(&c.root.join("eval")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("load:"), "{}", stderr(&out));
    assert!(!c.root.join("eval").exists());
}

#[test]
fn loho_writes_four_folds_and_a_consistent_pooled_report() {
    let c = Cohort::new(300, &[]);
    let out = c.run("loho", "loho", &["--max_iterations", "30", "--bootstrap_samples", "100", "--parallel-folds"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dir = c.root.join("loho");
    let mut weighted = 0.0;
    let mut total = 0usize;
    for k in 1..=4 {
        let fold = dir.join(format!("fold_{k}"));
        for f in ["policy.json", "training_log.csv", "cox_model.json", "grid.csv", "pooled.csv", "curve.svg"] {
            assert!(fold.join(f).is_file(), "fold_{k}/{f}");
        }
        assert_eq!(std::fs::read_to_string(fold.join("grid.csv")).unwrap().lines().count(), 26);
        let n: usize = csv_column(&fold.join("folds.csv"), "patients")[0].parse().unwrap();
        let rl: f64 = csv_column(&fold.join("pooled.csv"), "rl")[0].parse().unwrap();
        weighted += rl * n as f64;
        total += n;
    }
    assert!(!dir.join("fold_5").exists());
    let pooled: f64 = csv_column(&dir.join("pooled/pooled.csv"), "rl")[0].parse().unwrap();
    assert!((pooled - weighted / total as f64).abs() <= 1e-12, "{pooled} vs {}", weighted / total as f64);
    assert_eq!(csv_column(&dir.join("pooled/folds.csv"), "hospital").len(), 4);
}

#[test]
fn loho_needs_four_hospitals() {
    let c = Cohort::new(40, &[]);
    let csv = std::fs::read_to_string(c.cohort()).unwrap();
    let mut one = String::new();
    for (i, line) in csv.lines().enumerate() {
        let mut cols: Vec<&str> = line.split(',').collect();
        if i > 0 {
            cols[1] = "H1";
        }
        one.push_str(&cols.join(","));
        one.push('\n');
    }
    std::fs::write(c.cohort(), one).unwrap();
    let out = c.run("loho", "loho", &["--max_iterations", "5"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("exactly 4 hospitals"), "{}", stderr(&out));
    assert!(!c.root.join("loho").exists());
}
