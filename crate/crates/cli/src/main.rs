//! `oxyrl`: generate a synthetic cohort, train a flow policy, evaluate it
//! against the logged flows, or run the leave-one-hospital-out protocol.

mod outputs;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use oxyrl::cohort::{generate_synthetic_cohort, load_cohort, write_cohort_file, FeatureSchema, PatientRecord};
use oxyrl::ddpg::{read_training_log, write_training_log, PolicyCheckpoint, TrainingLog};
use oxyrl::eval::{
    build_report, evaluate_patients, fit_outcome_model, loho_folds, null_policy, prepare, run_fold, test_concordance,
    train_policy, write_patients_csv, write_report, EvalError, EvalOptions, FoldResult, FoldSummary, PatientResult,
};
use oxyrl::survival::{write_grid_report, CoxModel};
use oxyrl::TrainingConfig;

use outputs::Outputs;
use settings::{add_module_flags, Module, Settings};

#[derive(Parser)]
#[command(name = "oxyrl", version, about = "Offline oxygen-flow policy learning and Cox-model evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` settings file; flags override it
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed override (generator or training seed; also the bootstrap seed
    /// for evaluate and loho)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct Inputs {
    /// Long-format cohort CSV
    #[arg(long, value_name = "PATH")]
    cohort: PathBuf,
    /// Feature schema (`name,kind,unit` per line)
    #[arg(long, value_name = "PATH")]
    schema: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort and its schema
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a policy on a whole cohort
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Write a checkpoint that echoes logged flows instead of training
        #[arg(long, hide = true)]
        null_policy: bool,
    },
    /// Fit the outcome model on a cohort and compare a checkpoint's flows
    /// with the logged ones
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Policy checkpoint written by `train`
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Leave-one-hospital-out training and evaluation
    Loho {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Run the folds concurrently
        #[arg(long)]
        parallel_folds: bool,
        /// Keep going after a failed fold and report the others
        #[arg(long)]
        continue_on_failure: bool,
        #[arg(long, hide = true)]
        null_policy: bool,
    },
}

fn command() -> clap::Command {
    Cli::command()
        .mut_subcommand("generate", |c| add_module_flags(c, &[Module::Generator]))
        .mut_subcommand("train", |c| add_module_flags(c, &[Module::Training]))
        .mut_subcommand("evaluate", |c| add_module_flags(c, &[Module::Evaluation]))
        .mut_subcommand("loho", |c| add_module_flags(c, &[Module::Training, Module::Evaluation]))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match run(cli.command, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, m: &ArgMatches) -> Result<()> {
    match command {
        Command::Generate { common } => generate(&common, m),
        Command::Train {
            common,
            inputs,
            null_policy,
        } => train(&common, &inputs, null_policy, m),
        Command::Evaluate {
            common,
            inputs,
            checkpoint,
        } => evaluate(&common, &inputs, &checkpoint, m),
        Command::Loho {
            common,
            inputs,
            parallel_folds,
            continue_on_failure,
            null_policy,
        } => loho(&common, &inputs, parallel_folds, continue_on_failure, null_policy, m),
    }
}

fn stage(label: &str) -> impl Fn(&dyn std::fmt::Display) -> anyhow::Error + '_ {
    move |e| anyhow!("{label}: {e}")
}

/// Stage of an evaluation-pipeline error.
fn eval_stage(e: &EvalError) -> &'static str {
    match e {
        EvalError::Cohort(_) => "impute",
        EvalError::Ddpg(_) => "train",
        EvalError::Survival(_) => "fit",
        EvalError::Fold { source, .. } => eval_stage(source),
        EvalError::Io { .. } => "write",
        EvalError::Precondition(_) => "load",
        EvalError::Options(_) => "config",
        EvalError::Empty => "evaluate",
    }
}

fn eval_err(e: EvalError) -> anyhow::Error {
    anyhow!("{}: {e}", eval_stage(&e))
}

fn settings(common: &Common, m: &ArgMatches, modules: &[Module]) -> Result<Settings> {
    Settings::resolve(common.config.as_deref(), m, modules).map_err(|e| stage("config")(&e))
}

fn load(inputs: &Inputs) -> Result<(FeatureSchema, Vec<PatientRecord>)> {
    let schema = FeatureSchema::read(&inputs.schema).map_err(|e| stage("load")(&e))?;
    let records = load_cohort(&inputs.cohort, &schema).map_err(|e| stage("load")(&e))?;
    if records.is_empty() {
        return Err(anyhow!("load: {}: no patients", inputs.cohort.display()));
    }
    Ok((schema, records))
}

fn generate(common: &Common, m: &ArgMatches) -> Result<()> {
    let mut s = settings(common, m, &[Module::Generator])?;
    if let Some(seed) = common.seed {
        s.set("seed", seed);
    }
    let cfg = s.generator().map_err(|e| stage("config")(&e))?;
    s.finish().map_err(|e| stage("config")(&e))?;
    cfg.validate().map_err(|e| stage("config")(&e))?;

    let (schema, records) = generate_synthetic_cohort(&cfg).map_err(|e| stage("generate")(&e))?;
    let mut out = Outputs::create(&common.out)?;
    let cohort_path = out.path("cohort.csv");
    write_cohort_file(&cohort_path, &records, &schema).map_err(|e| stage("write")(&e))?;
    out.write("schema.txt", schema.render())?;
    out.write("config.txt", cfg.to_key_values().render())?;

    let schema_back = FeatureSchema::read(&out.path("schema.txt")).map_err(|e| stage("validate")(&e))?;
    let back = load_cohort(&cohort_path, &schema_back).map_err(|e| stage("validate")(&e))?;
    if back != records {
        return Err(anyhow!("validate: {} does not load back to the generated records", cohort_path.display()));
    }
    out.commit();
    Ok(())
}

fn train(common: &Common, inputs: &Inputs, null: bool, m: &ArgMatches) -> Result<()> {
    let mut s = settings(common, m, &[Module::Training])?;
    if let Some(seed) = common.seed {
        s.set("seed", seed);
    }
    let config = s.training().map_err(|e| stage("config")(&e))?;
    s.finish().map_err(|e| stage("config")(&e))?;
    config.validate().map_err(|e| stage("config")(&e))?;

    let (schema, records) = load(inputs)?;
    let refs: Vec<&PatientRecord> = records.iter().collect();
    let (policy, log) = if null {
        let (ck, _) = null_policy(&refs, &schema, &config).map_err(eval_err)?;
        (ck, empty_log())
    } else {
        let (ck, log, _) = train_policy(&refs, &schema, &config).map_err(eval_err)?;
        (ck, log)
    };

    let mut out = Outputs::create(&common.out)?;
    write_policy(&mut out, "", &policy, Some(&log))?;
    out.write("config.txt", config.to_key_values().render())?;
    out.commit();
    Ok(())
}

fn empty_log() -> TrainingLog {
    TrainingLog {
        rows: Vec::new(),
        stop_reason: oxyrl::ddpg::StopReason::MaxIterations,
        iterations: 0,
        best_consistency: None,
    }
}

/// Writes `policy.json` (and `training_log.csv`) under `prefix` and reads
/// them back.
fn write_policy(out: &mut Outputs, prefix: &str, policy: &PolicyCheckpoint, log: Option<&TrainingLog>) -> Result<()> {
    let path = out.path(&format!("{prefix}policy.json"));
    policy.write(&path).map_err(|e| stage("write")(&e))?;
    if PolicyCheckpoint::read(&path).map_err(|e| stage("validate")(&e))? != *policy {
        return Err(anyhow!("validate: {} does not load back to the trained policy", path.display()));
    }
    if let Some(log) = log {
        let path = out.path(&format!("{prefix}training_log.csv"));
        write_training_log(&path, log).map_err(|e| stage("write")(&e))?;
        if read_training_log(&path).map_err(|e| stage("validate")(&e))? != log.rows {
            return Err(anyhow!("validate: {} does not match the training log", path.display()));
        }
    }
    Ok(())
}

fn write_outcome(out: &mut Outputs, prefix: &str, fold: &FoldResult) -> Result<()> {
    let path = out.path(&format!("{prefix}cox_model.json"));
    fold.outcome.cox.write(&path).map_err(|e| stage("write")(&e))?;
    if CoxModel::read(&path).map_err(|e| stage("validate")(&e))? != fold.outcome.cox {
        return Err(anyhow!("validate: {} does not load back to the fitted model", path.display()));
    }
    out.write(&format!("{prefix}cox_design.json"), fold.outcome.design.to_json().map_err(eval_err)?)?;
    let path = out.path(&format!("{prefix}grid.csv"));
    write_grid_report(&path, &fold.outcome.grid).map_err(|e| stage("write")(&e))?;
    let path = out.path(&format!("{prefix}patients.csv"));
    write_patients_csv(&path, &fold.patients).map_err(eval_err)
}

fn write_full_report(
    out: &mut Outputs,
    dir: &str,
    patients: &[PatientResult],
    folds: Vec<FoldSummary>,
    schema: &FeatureSchema,
    options: &EvalOptions,
) -> Result<()> {
    let report = build_report(patients, folds, schema, options).map_err(eval_err)?;
    let path = out.dir(dir)?;
    out.capture(&path, || write_report(&path, &report)).map_err(eval_err)
}

fn evaluate(common: &Common, inputs: &Inputs, checkpoint: &Path, m: &ArgMatches) -> Result<()> {
    let mut s = settings(common, m, &[Module::Evaluation])?;
    if let Some(seed) = common.seed {
        s.set("bootstrap_seed", seed);
    }
    let options = s.evaluation().map_err(|e| stage("config")(&e))?;
    s.finish().map_err(|e| stage("config")(&e))?;
    options.validate().map_err(|e| stage("config")(&e))?;

    let (schema, records) = load(inputs)?;
    let policy = PolicyCheckpoint::read(checkpoint).map_err(|e| stage("load")(&e))?;
    if policy.feature_names != schema.names() {
        return Err(anyhow!(
            "load: {} was trained on a different feature schema",
            checkpoint.display()
        ));
    }
    let refs: Vec<&PatientRecord> = records.iter().collect();
    let trajs = prepare(&refs, &schema, &policy.stats, policy.config.interval_hours).map_err(eval_err)?;
    let outcome = fit_outcome_model(&trajs, schema.names(), &options).map_err(eval_err)?;
    let patients = evaluate_patients(&refs, &trajs, &schema, &policy, &outcome).map_err(eval_err)?;
    let fold = FoldResult {
        hospital: "all".into(),
        train_patients: records.iter().map(|r| r.patient_id.clone()).collect(),
        concordance: test_concordance(&outcome, &trajs),
        policy,
        training_log: None,
        outcome,
        patients,
    };

    let mut out = Outputs::create(&common.out)?;
    write_outcome(&mut out, "", &fold)?;
    let summary = vec![FoldSummary::of(&fold, &options)];
    write_full_report(&mut out, "", &fold.patients, summary, &schema, &options)?;
    out.write("config.txt", options.to_key_values().render())?;
    out.commit();
    Ok(())
}

fn loho(
    common: &Common,
    inputs: &Inputs,
    parallel_folds: bool,
    continue_on_failure: bool,
    null: bool,
    m: &ArgMatches,
) -> Result<()> {
    let mut s = settings(common, m, &[Module::Training, Module::Evaluation])?;
    if let Some(seed) = common.seed {
        s.set("seed", seed);
        s.set("bootstrap_seed", seed);
    }
    let config: TrainingConfig = s.training().map_err(|e| stage("config")(&e))?;
    let options = s.evaluation().map_err(|e| stage("config")(&e))?;
    s.finish().map_err(|e| stage("config")(&e))?;
    config.validate().map_err(|e| stage("config")(&e))?;
    options.validate().map_err(|e| stage("config")(&e))?;

    let (schema, records) = load(inputs)?;
    let folds = loho_folds(&records).map_err(eval_err)?;
    let run = |f: &oxyrl::cohort::Fold| {
        log::info!("fold {}: {} train / {} test patients", f.hospital, f.train.len(), f.test.len());
        run_fold(&records, &schema, f, &config, &options, null)
    };
    let results: Vec<Result<FoldResult, EvalError>> = if parallel_folds {
        oxyrl::par::map(&folds, run)
    } else {
        let mut v = Vec::new();
        for f in &folds {
            let r = run(f);
            let failed = r.is_err();
            v.push(r);
            if failed && !continue_on_failure {
                break;
            }
        }
        v
    };

    let mut out = Outputs::create(&common.out)?;
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => {
                let prefix = format!("fold_{}/", k + 1);
                out.dir(&prefix)?;
                write_policy(&mut out, &prefix, &f.policy, f.training_log.as_ref())?;
                write_outcome(&mut out, &prefix, &f)?;
                out.write(&format!("{prefix}hospital.txt"), format!("{}\n", f.hospital))?;
                let summary = vec![FoldSummary::of(&f, &options)];
                write_full_report(&mut out, &prefix, &f.patients, summary, &schema, &options)?;
                done.push(f);
            }
            Err(e) => {
                log::error!("{e}");
                failures.push(eval_err(e));
                if !continue_on_failure {
                    return Err(failures.remove(0));
                }
            }
        }
    }
    if !done.is_empty() {
        let patients: Vec<PatientResult> = done.iter().flat_map(|f| f.patients.iter().cloned()).collect();
        let summaries = done.iter().map(|f| FoldSummary::of(f, &options)).collect();
        write_full_report(&mut out, "pooled/", &patients, summaries, &schema, &options)?;
        write_patients_csv(&out.path("pooled/patients.csv"), &patients).map_err(eval_err)?;
    }
    let mut rendered = config.to_key_values();
    for (k, v) in options.to_key_values().iter() {
        rendered.set(k, v);
    }
    out.write("config.txt", rendered.render())?;
    if failures.is_empty() {
        out.commit();
        return Ok(());
    }
    let n = failures.len();
    let text: Vec<String> = failures.iter().map(|e| e.to_string()).collect();
    out.write("failures.txt", text.join("\n") + "\n")?;
    // partial results are kept on purpose; the exit code still reports the failure
    out.commit();
    Err(anyhow!("{n} of {} folds failed:\n  {}", folds.len(), text.join("\n  ")))
}
