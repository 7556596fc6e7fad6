//! Effective settings: defaults, then the config file, then flags.
//!
//! Every module setting is exposed as a long flag spelled exactly like its
//! config key (`--max_iterations 200` and `max_iterations = 200` are the
//! same setting). The flags are generated from each module's default key set.

use std::path::Path;

use anyhow::{bail, Result};
use clap::{Arg, ArgMatches, Command};
use oxyrl::cohort::GeneratorConfig;
use oxyrl::eval::EvalOptions;
use oxyrl::kv::KeyValues;
use oxyrl::TrainingConfig;

/// Settings groups a subcommand reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Generator,
    Training,
    Evaluation,
}

impl Module {
    fn defaults(self) -> KeyValues {
        match self {
            Module::Generator => GeneratorConfig::default().to_key_values(),
            Module::Training => TrainingConfig::default().to_key_values(),
            Module::Evaluation => EvalOptions::default().to_key_values(),
        }
    }

    fn heading(self) -> &'static str {
        match self {
            Module::Generator => "Generator settings",
            Module::Training => "Training settings",
            Module::Evaluation => "Evaluation settings",
        }
    }

    /// Generator keys with a feature suffix accept any feature name in a
    /// config file, not only the defaults.
    fn owns(self, key: &str) -> bool {
        if self == Module::Generator
            && ["beta.", "dose_slope.", "dose_center.", "prevalence."].iter().any(|p| key.starts_with(p))
        {
            return true;
        }
        self.defaults().get(key).is_some()
    }
}

const ALL: [Module; 3] = [Module::Generator, Module::Training, Module::Evaluation];

/// Adds one `--<key>` flag per setting of `modules`, skipping keys an
/// earlier module already registered (`seed` is shared).
pub fn add_module_flags(mut cmd: Command, modules: &[Module]) -> Command {
    let mut seen = std::collections::HashSet::new();
    for &m in modules {
        for (key, default) in m.defaults().iter() {
            if !seen.insert(key.to_string()) || key == "seed" {
                continue;
            }
            cmd = cmd.arg(
                Arg::new(key.to_string())
                    .long(key.to_string())
                    .value_name("VALUE")
                    .help(format!("[default: {default}]"))
                    .help_heading(m.heading()),
            );
        }
    }
    cmd
}

/// Key-values of one run, before the module configs consume them.
pub struct Settings {
    kv: KeyValues,
    modules: Vec<Module>,
}

impl Settings {
    /// File values, overlaid by every module flag present in `matches`.
    pub fn resolve(config: Option<&Path>, matches: &ArgMatches, modules: &[Module]) -> Result<Self> {
        let mut kv = match config {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::new(),
        };
        for &m in modules {
            for (key, _) in m.defaults().iter() {
                if key == "seed" {
                    continue;
                }
                if let Ok(Some(v)) = matches.try_get_one::<String>(key) {
                    kv.set(key, v);
                }
            }
        }
        Ok(Self {
            kv,
            modules: modules.to_vec(),
        })
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.kv.set(key, value);
    }

    pub fn generator(&mut self) -> Result<GeneratorConfig> {
        Ok(GeneratorConfig::from_key_values(&mut self.kv)?)
    }

    pub fn training(&mut self) -> Result<TrainingConfig> {
        Ok(TrainingConfig::from_key_values(&mut self.kv)?)
    }

    pub fn evaluation(&mut self) -> Result<EvalOptions> {
        Ok(EvalOptions::from_key_values(&mut self.kv)?)
    }

    /// Errors on keys no module knows. Keys that belong to a module this
    /// subcommand does not use are dropped with a warning, so one config
    /// file can serve every subcommand.
    pub fn finish(self) -> Result<()> {
        let mut unknown = Vec::new();
        for (key, _) in self.kv.iter() {
            match ALL.iter().find(|m| m.owns(key)) {
                Some(m) if !self.modules.contains(m) => log::warn!("ignoring `{key}` (not used by this subcommand)"),
                _ => unknown.push(key.to_string()),
            }
        }
        if !unknown.is_empty() {
            bail!(oxyrl::kv::KvError::Unknown(unknown));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_shared_and_prefixed_keys_are_owned() {
        assert!(Module::Generator.owns("seed") && Module::Training.owns("seed"));
        assert!(Module::Generator.owns("beta.age"));
        assert!(Module::Evaluation.owns("l1_values"));
        assert!(!ALL.iter().any(|m| m.owns("max_iteration")));
    }

    #[test]
    fn flags_are_spelled_like_keys() {
        let cmd = add_module_flags(Command::new("t"), &[Module::Training, Module::Evaluation]);
        let m = cmd.try_get_matches_from(["t", "--max_iterations", "7", "--bootstrap_samples=20"]).unwrap();
        let mut s = Settings::resolve(None, &m, &[Module::Training, Module::Evaluation]).unwrap();
        assert_eq!(s.training().unwrap().max_iterations, 7);
        assert_eq!(s.evaluation().unwrap().bootstrap_samples, 20);
        s.finish().unwrap();
    }
}
