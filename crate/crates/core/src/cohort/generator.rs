//! Hazard-driven synthetic cohort.
//!
//! Each patient carries a latent severity that evolves in 4-hour steps and
//! drives labs and vitals. Death is drawn from a piecewise-constant hazard
//!
//! ```text
//! λ(t) = λ0 · exp(η(s_t) + κ · (a_t − a*(s_t))²)
//! ```
//!
//! where η is linear in the labs and demographics with fixed per-feature
//! slopes multiplied by `coefficient_scale`, and a*(s) is a clamped linear
//! map of named features (patient archetype by default). Dose deviations
//! also push severity upward by `severity_gain · κ · (a − a*)²`, so κ = 0
//! makes outcomes fully dose-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF};

use super::{CohortError, FeatureKind, FeatureSchema, Observation, Outcome, PatientRecord, MAX_FLOW};
use crate::kv::{KeyValues, KvError};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DosePolicy {
    /// Logged physician behavior: optimal dose plus bias and noise.
    Behavior,
    /// Always the hazard-minimizing dose.
    Optimal,
}

impl std::str::FromStr for DosePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "behavior" => Ok(DosePolicy::Behavior),
            "optimal" => Ok(DosePolicy::Optimal),
            other => Err(format!("unknown dose policy `{other}` (behavior | optimal)")),
        }
    }
}

impl std::fmt::Display for DosePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DosePolicy::Behavior => "behavior",
            DosePolicy::Optimal => "optimal",
        })
    }
}

/// One term of the optimal-dose map: `slope · (x − center)` on a raw
/// feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseTerm {
    pub feature: String,
    pub slope: f64,
    pub center: f64,
}

/// a*(s) = clamp(intercept + Σ slope·(x − center), min, max). The default
/// map reads patient archetype only (BMI, asthma/COPD, heart failure), so
/// the hazard-minimizing dose does not track the latent severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalDoseProfile {
    pub intercept: f64,
    pub terms: Vec<DoseTerm>,
    pub min: f64,
    pub max: f64,
}

impl Default for OptimalDoseProfile {
    fn default() -> Self {
        let term = |feature: &str, slope, center| DoseTerm {
            feature: feature.into(),
            slope,
            center,
        };
        Self {
            intercept: 22.0,
            terms: vec![
                term("bmi", 0.6, 28.61),
                term("asthma_copd", -8.0, 0.0),
                term("heart_failure", 6.0, 0.0),
            ],
            min: 5.0,
            max: 55.0,
        }
    }
}

impl OptimalDoseProfile {
    /// Resolves feature names against `schema`.
    pub fn bind(&self, schema: &FeatureSchema) -> Result<BoundDoseProfile, CohortError> {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                schema
                    .index_of(&t.feature)
                    .map(|j| (j, t.slope, t.center))
                    .ok_or_else(|| CohortError::Config(format!("optimal dose term on unknown feature `{}`", t.feature)))
            })
            .collect::<Result<_, _>>()?;
        Ok(BoundDoseProfile {
            intercept: self.intercept,
            terms,
            min: self.min,
            max: self.max,
        })
    }
}

/// [`OptimalDoseProfile`] with schema indices resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundDoseProfile {
    intercept: f64,
    terms: Vec<(usize, f64, f64)>,
    min: f64,
    max: f64,
}

impl BoundDoseProfile {
    /// a* for a raw (unnormalized) state vector in schema order.
    pub fn dose(&self, raw_state: &[f64]) -> f64 {
        self.dose_with(|j| raw_state[j])
    }

    fn dose_with(&self, value: impl Fn(usize) -> f64) -> f64 {
        let lin: f64 = self.terms.iter().map(|&(j, b, c)| b * (value(j) - c)).sum();
        (self.intercept + lin).clamp(self.min, self.max)
    }
}

/// Hazard parameters. `coefficients` are log-hazard slopes per raw unit,
/// keyed by feature name; features not listed have no direct effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    /// Baseline hazard per hour.
    pub baseline: f64,
    pub coefficient_scale: f64,
    pub coefficients: Vec<(String, f64)>,
    /// Quadratic dose penalty κ, per (L/min)².
    pub kappa: f64,
    /// Severity increase per unit of κ·(a − a*)² in one step.
    pub severity_gain: f64,
}

impl Default for HazardModel {
    fn default() -> Self {
        let coefficients = [
            ("age", 0.02),
            ("anion_gap", 0.03),
            ("bun", 0.0),
            ("calcium", -0.19),
            ("paco2", -0.01),
            ("eosinophils", -0.04),
            ("hco3", -0.01),
            ("mpv", 0.05),
            ("nrbc", 0.08),
            ("ph", -1.86),
            ("phosphorus", 0.03),
            ("pao2", 0.0),
            ("potassium", 0.15),
            ("rdw_cv", 0.06),
            ("wbc", 0.01),
            ("heart_failure", 0.3),
            ("dementia", 0.3),
            ("coronary_artery_disease", 0.1),
            ("asthma_copd", 0.1),
        ]
        .iter()
        .map(|&(n, b)| (n.to_string(), b))
        .collect();
        Self {
            baseline: 1.2e-6,
            coefficient_scale: 3.0,
            coefficients,
            kappa: 0.02,
            severity_gain: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub hazard: HazardModel,
    pub optimal_dose: OptimalDoseProfile,
    pub dose_policy: DosePolicy,
    /// Mean offset of the behavior dose above a*(s), L/min.
    pub behavior_bias: f64,
    /// SD of the per-patient dosing offset.
    pub patient_bias_sd: f64,
    /// SD of the per-setting dosing noise.
    pub step_noise_sd: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Lower truncation of age; the moments above describe the truncated law.
    pub age_min: f64,
    pub bmi_mean: f64,
    pub bmi_sd: f64,
    pub male_fraction: f64,
    /// Prevalence of each comorbidity flag, in schema order.
    pub comorbidity_prevalence: Vec<(String, f64)>,
    pub flow_interval_hours: f64,
    pub vital_interval_hours: f64,
    pub lab_interval_hours: f64,
    pub lab_missing_probability: f64,
    pub discharge_min_hours: f64,
    pub discharge_max_hours: f64,
    pub censor_probability: f64,
    pub hospitals: Vec<String>,
    pub hospital_weights: Vec<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let comorbidity_prevalence = COMORBIDITIES
            .iter()
            .map(|&(n, p)| (n.to_string(), p))
            .collect();
        Self {
            n_patients: 2000,
            seed: 20200101,
            hazard: HazardModel::default(),
            optimal_dose: OptimalDoseProfile::default(),
            dose_policy: DosePolicy::Behavior,
            behavior_bias: 5.0,
            patient_bias_sd: 3.0,
            step_noise_sd: 6.0,
            age_mean: 69.72,
            age_sd: 10.75,
            age_min: 50.0,
            bmi_mean: 28.61,
            bmi_sd: 6.74,
            male_fraction: 0.6449,
            comorbidity_prevalence,
            flow_interval_hours: 4.0,
            vital_interval_hours: 4.0,
            lab_interval_hours: 24.0,
            lab_missing_probability: 0.1,
            discharge_min_hours: 72.0,
            discharge_max_hours: 240.0,
            censor_probability: 0.03,
            hospitals: (1..=4).map(|h| format!("H{h}")).collect(),
            hospital_weights: vec![0.3, 0.25, 0.25, 0.2],
        }
    }
}

const COMORBIDITIES: [(&str, f64); 8] = [
    ("hyperlipidemia", 0.7175),
    ("coronary_artery_disease", 0.4123),
    ("heart_failure", 0.2979),
    ("hypertension", 0.8518),
    ("diabetes", 0.5143),
    ("asthma_copd", 0.1592),
    ("dementia", 0.0976),
    ("stroke", 0.1431),
];

/// Lab layout: name, unit, population mean, SD, loading on severity.
/// Loadings follow the sign of each lab's hazard slope so sicker patients
/// look sicker.
const LABS: [(&str, &str, f64, f64, f64); 16] = [
    ("anion_gap", "mmol/L", 12.0, 3.0, 0.6),
    ("bun", "mg/dL", 25.0, 12.0, 0.5),
    ("calcium", "mg/dL", 8.6, 0.5, -0.6),
    ("paco2", "mmHg", 40.0, 6.0, -0.4),
    ("eosinophils", "%", 1.0, 1.0, -0.5),
    ("hco3", "mmol/L", 24.0, 3.0, -0.5),
    ("mpv", "fL", 10.5, 1.0, 0.5),
    ("nrbc", "/100 WBC", 0.5, 1.0, 0.6),
    ("ph", "pH", 7.40, 0.06, -0.6),
    ("phosphorus", "mg/dL", 3.5, 0.9, 0.5),
    ("pao2", "mmHg", 80.0, 20.0, -0.5),
    ("potassium", "mmol/L", 4.2, 0.5, 0.5),
    ("rdw_cv", "%", 14.0, 1.5, 0.6),
    ("rdw_sd", "fL", 46.0, 5.0, 0.6),
    ("wbc", "10^9/L", 8.5, 3.5, 0.5),
    ("d_dimer", "ug/mL", 1.5, 1.0, 0.5),
];

/// Vital layout as for labs.
const VITALS: [(&str, &str, f64, f64, f64); 5] = [
    ("spo2", "%", 93.0, 2.5, -0.9),
    ("heart_rate", "bpm", 88.0, 14.0, 0.5),
    ("resp_rate", "breaths/min", 21.0, 4.0, 0.6),
    ("sbp", "mmHg", 128.0, 18.0, -0.2),
    ("temperature", "C", 37.3, 0.6, 0.3),
];

/// rdw_sd shares most of its patient-level variation with rdw_cv.
const RDW_SHARED: f64 = 0.95;

/// Feature layout of generated cohorts.
pub fn synthetic_schema() -> FeatureSchema {
    let mut f: Vec<(String, FeatureKind, String)> = vec![
        ("age".into(), FeatureKind::Static, "years".into()),
        ("male".into(), FeatureKind::Static, "indicator".into()),
        ("bmi".into(), FeatureKind::Static, "kg/m2".into()),
    ];
    for (name, _) in COMORBIDITIES {
        f.push((name.into(), FeatureKind::Comorbidity, "indicator".into()));
    }
    for (name, unit, ..) in LABS {
        f.push((name.into(), FeatureKind::Lab, unit.into()));
    }
    for (name, unit, ..) in VITALS {
        f.push((name.into(), FeatureKind::Vital, unit.into()));
    }
    FeatureSchema::new(f).expect("built-in schema is valid")
}

impl GeneratorConfig {
    /// Overlays values from `kv` onto the defaults, consuming recognized keys.
    ///
    /// Hazard slopes use `beta.<feature>` keys; everything else mirrors the
    /// field names.
    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self, KvError> {
        let mut c = Self::default();
        macro_rules! take {
            ($key:literal => $field:expr) => {
                if let Some(v) = kv.take($key)? {
                    $field = v;
                }
            };
        }
        take!("n_patients" => c.n_patients);
        take!("seed" => c.seed);
        take!("baseline_hazard" => c.hazard.baseline);
        take!("coefficient_scale" => c.hazard.coefficient_scale);
        take!("kappa" => c.hazard.kappa);
        take!("severity_gain" => c.hazard.severity_gain);
        take!("optimal_dose_intercept" => c.optimal_dose.intercept);
        take!("optimal_dose_min" => c.optimal_dose.min);
        take!("optimal_dose_max" => c.optimal_dose.max);
        take!("dose_policy" => c.dose_policy);
        take!("behavior_bias" => c.behavior_bias);
        take!("patient_bias_sd" => c.patient_bias_sd);
        take!("step_noise_sd" => c.step_noise_sd);
        take!("age_mean" => c.age_mean);
        take!("age_sd" => c.age_sd);
        take!("age_min" => c.age_min);
        take!("bmi_mean" => c.bmi_mean);
        take!("bmi_sd" => c.bmi_sd);
        take!("male_fraction" => c.male_fraction);
        take!("flow_interval_hours" => c.flow_interval_hours);
        take!("vital_interval_hours" => c.vital_interval_hours);
        take!("lab_interval_hours" => c.lab_interval_hours);
        take!("lab_missing_probability" => c.lab_missing_probability);
        take!("discharge_min_hours" => c.discharge_min_hours);
        take!("discharge_max_hours" => c.discharge_max_hours);
        take!("censor_probability" => c.censor_probability);
        if let Some(h) = kv.take_list::<String>("hospitals")? {
            c.hospitals = h;
        }
        if let Some(w) = kv.take_list::<f64>("hospital_weights")? {
            c.hospital_weights = w;
        }
        for (name, p) in &mut c.comorbidity_prevalence {
            if let Some(v) = kv.take(&format!("prevalence.{name}"))? {
                *p = v;
            }
        }
        let schema = synthetic_schema();
        let known = |key: &str, name: &str| -> Result<(), KvError> {
            if schema.index_of(name).is_none() {
                return Err(KvError::Invalid {
                    key: key.to_string(),
                    reason: format!("`{name}` is not a generated feature"),
                });
            }
            Ok(())
        };
        for prefix in ["dose_slope.", "dose_center."] {
            let keys: Vec<String> = kv
                .iter()
                .map(|(k, _)| k.to_string())
                .filter(|k| k.starts_with(prefix))
                .collect();
            for key in keys {
                let name = &key[prefix.len()..];
                known(&key, name)?;
                let v: f64 = kv.take(&key)?.expect("key listed above");
                let terms = &mut c.optimal_dose.terms;
                let idx = match terms.iter().position(|t| t.feature == name) {
                    Some(i) => i,
                    None => {
                        terms.push(DoseTerm {
                            feature: name.to_string(),
                            slope: 0.0,
                            center: 0.0,
                        });
                        terms.len() - 1
                    }
                };
                if prefix == "dose_slope." {
                    terms[idx].slope = v;
                } else {
                    terms[idx].center = v;
                }
            }
        }
        let beta_keys: Vec<String> = kv
            .iter()
            .map(|(k, _)| k.to_string())
            .filter(|k| k.starts_with("beta."))
            .collect();
        for key in beta_keys {
            let name = &key["beta.".len()..];
            known(&key, name)?;
            let v: f64 = kv.take(&key)?.expect("key listed above");
            match c.hazard.coefficients.iter_mut().find(|(n, _)| n == name) {
                Some(entry) => entry.1 = v,
                None => c.hazard.coefficients.push((name.to_string(), v)),
            }
        }
        Ok(c)
    }

    /// Checks the config invariants.
    pub fn validate(&self) -> Result<(), CohortError> {
        let err = |m: String| Err(CohortError::Config(m));
        if self.n_patients == 0 {
            return err("n_patients must be positive".into());
        }
        if self.hospitals.len() != 4 || self.hospital_weights.len() != 4 {
            return err(format!(
                "exactly 4 hospitals with 4 weights are required, got {} labels and {} weights",
                self.hospitals.len(),
                self.hospital_weights.len()
            ));
        }
        let mut labels = self.hospitals.clone();
        labels.sort();
        labels.dedup();
        if labels.len() != 4 || self.hospitals.iter().any(|h| h.is_empty() || h.contains(',')) {
            return err("hospital labels must be distinct, non-empty and comma-free".into());
        }
        if self.hospital_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.hospital_weights.iter().sum::<f64>() <= 0.0
        {
            return err("hospital weights must be non-negative with a positive sum".into());
        }
        let positive = [
            ("baseline_hazard", self.hazard.baseline),
            ("age_sd", self.age_sd),
            ("bmi_sd", self.bmi_sd),
            ("flow_interval_hours", self.flow_interval_hours),
            ("vital_interval_hours", self.vital_interval_hours),
            ("lab_interval_hours", self.lab_interval_hours),
            ("discharge_min_hours", self.discharge_min_hours),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        let nonneg = [
            ("kappa", self.hazard.kappa),
            ("severity_gain", self.hazard.severity_gain),
            ("patient_bias_sd", self.patient_bias_sd),
            ("step_noise_sd", self.step_noise_sd),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be non-negative, got {v}"));
            }
        }
        let probs = [
            ("male_fraction", self.male_fraction),
            ("lab_missing_probability", self.lab_missing_probability),
            ("censor_probability", self.censor_probability),
        ];
        for (name, p) in probs.into_iter().chain(
            self.comorbidity_prevalence
                .iter()
                .map(|(n, p)| (n.as_str(), *p)),
        ) {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} must be a probability, got {p}"));
            }
        }
        if self.discharge_max_hours < self.discharge_min_hours {
            return err("discharge_max_hours is below discharge_min_hours".into());
        }
        let o = &self.optimal_dose;
        if !(0.0 <= o.min && o.min <= o.max && o.max <= MAX_FLOW) {
            return err(format!("optimal dose range [{}, {}] must lie in [0, 60]", o.min, o.max));
        }
        if self.age_mean <= self.age_min {
            return err("age_mean must exceed age_min".into());
        }
        Ok(())
    }

    /// Key-value rendering of the scalar settings (documentation and logs).
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_patients", self.n_patients);
        kv.set("seed", self.seed);
        kv.set("baseline_hazard", self.hazard.baseline);
        kv.set("coefficient_scale", self.hazard.coefficient_scale);
        kv.set("kappa", self.hazard.kappa);
        kv.set("severity_gain", self.hazard.severity_gain);
        kv.set("optimal_dose_intercept", self.optimal_dose.intercept);
        kv.set("optimal_dose_min", self.optimal_dose.min);
        kv.set("optimal_dose_max", self.optimal_dose.max);
        kv.set("dose_policy", self.dose_policy);
        kv.set("behavior_bias", self.behavior_bias);
        kv.set("patient_bias_sd", self.patient_bias_sd);
        kv.set("step_noise_sd", self.step_noise_sd);
        kv.set("age_mean", self.age_mean);
        kv.set("age_sd", self.age_sd);
        kv.set("age_min", self.age_min);
        kv.set("bmi_mean", self.bmi_mean);
        kv.set("bmi_sd", self.bmi_sd);
        kv.set("male_fraction", self.male_fraction);
        kv.set("flow_interval_hours", self.flow_interval_hours);
        kv.set("vital_interval_hours", self.vital_interval_hours);
        kv.set("lab_interval_hours", self.lab_interval_hours);
        kv.set("lab_missing_probability", self.lab_missing_probability);
        kv.set("discharge_min_hours", self.discharge_min_hours);
        kv.set("discharge_max_hours", self.discharge_max_hours);
        kv.set("censor_probability", self.censor_probability);
        kv.set("hospitals", self.hospitals.join(","));
        kv.set(
            "hospital_weights",
            self.hospital_weights
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        for (name, p) in &self.comorbidity_prevalence {
            kv.set(format!("prevalence.{name}"), p);
        }
        for (name, b) in &self.hazard.coefficients {
            kv.set(format!("beta.{name}"), b);
        }
        for t in &self.optimal_dose.terms {
            kv.set(format!("dose_slope.{}", t.feature), t.slope);
            kv.set(format!("dose_center.{}", t.feature), t.center);
        }
        kv
    }
}

/// Parameters (μ, σ) of a normal whose restriction to `[lower, ∞)` has the
/// given mean and SD. Solved by damped fixed-point iteration on the
/// truncated-moment formulas.
fn truncated_normal_params(mean: f64, sd: f64, lower: f64) -> (f64, f64) {
    let std = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    let moments = |mu: f64, sigma: f64| {
        let alpha = (lower - mu) / sigma;
        let tail = 1.0 - std.cdf(alpha);
        let lambda = std.pdf(alpha) / tail.max(1e-300);
        let m = mu + sigma * lambda;
        let v = sigma * sigma * (1.0 + alpha * lambda - lambda * lambda);
        (m, v.max(0.0).sqrt())
    };
    let (mut mu, mut sigma) = (mean, sd);
    for _ in 0..500 {
        let (m, s) = moments(mu, sigma);
        mu += 0.7 * (mean - m);
        sigma = (sigma + 0.7 * (sd - s)).max(1e-6);
        if (m - mean).abs() < 1e-12 && (s - sd).abs() < 1e-12 {
            break;
        }
    }
    (mu, sigma)
}

struct Plan<'a> {
    cfg: &'a GeneratorConfig,
    schema: FeatureSchema,
    age_mu: f64,
    age_sigma: f64,
    /// Raw-unit log-hazard slope per schema feature (already scaled).
    beta: Vec<f64>,
    lab_offset: usize,
    vital_offset: usize,
    dose: BoundDoseProfile,
}

/// Draws a reproducible cohort; patient `i` uses substream `i` of `seed`, so
/// the output does not depend on thread scheduling.
pub fn generate_synthetic_cohort(
    config: &GeneratorConfig,
) -> Result<(FeatureSchema, Vec<PatientRecord>), CohortError> {
    config.validate()?;
    let schema = synthetic_schema();
    let mut beta = vec![0.0; schema.len()];
    for (name, b) in &config.hazard.coefficients {
        let j = schema.index_of(name).ok_or_else(|| {
            CohortError::Config(format!("hazard coefficient for unknown feature `{name}`"))
        })?;
        beta[j] = b * config.hazard.coefficient_scale;
    }
    let (age_mu, age_sigma) = truncated_normal_params(config.age_mean, config.age_sd, config.age_min);
    let lab_offset = 3 + COMORBIDITIES.len();
    let vital_offset = lab_offset + LABS.len();
    let plan = Plan {
        cfg: config,
        age_mu,
        age_sigma,
        beta,
        lab_offset,
        vital_offset,
        dose: config.optimal_dose.bind(&schema)?,
        schema: schema.clone(),
    };
    let records = par::map_range(config.n_patients, |i| plan.patient(i));
    Ok((schema, records))
}

impl Plan<'_> {
    fn patient(&self, index: usize) -> PatientRecord {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        // draw order is fixed below; changing it changes every cohort
        let z_scores: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = self.schema.len();
        let mut statics = vec![None; p];

        let age = loop {
            let a = self.age_mu + self.age_sigma * rng_normal(&mut rng);
            if a >= cfg.age_min {
                break a;
            }
        };
        let male = rng.random::<f64>() < cfg.male_fraction;
        let bmi = (cfg.bmi_mean + cfg.bmi_sd * z_scores[0]).max(14.0);
        statics[0] = Some((age * 10.0).round() / 10.0);
        statics[1] = Some(if male { 1.0 } else { 0.0 });
        statics[2] = Some((bmi * 10.0).round() / 10.0);
        for (k, (_, prev)) in cfg.comorbidity_prevalence.iter().enumerate() {
            let has = rng.random::<f64>() < *prev;
            statics[3 + k] = Some(if has { 1.0 } else { 0.0 });
        }

        let hospital = {
            let total: f64 = cfg.hospital_weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = cfg.hospitals.len() - 1;
            for (k, w) in cfg.hospital_weights.iter().enumerate() {
                if u < *w {
                    pick = k;
                    break;
                }
                u -= w;
            }
            cfg.hospitals[pick].clone()
        };

        // patient-level severity and per-feature idiosyncratic offsets
        let severity_mean = 0.6 * z_scores[1] + 0.01 * (age - 70.0);
        let mut z = severity_mean + 0.5 * z_scores[2];
        let n_fluid = LABS.len() + VITALS.len();
        let idio: Vec<f64> = (0..n_fluid).map(|_| rng_normal(&mut rng)).collect();
        let patient_bias = cfg.patient_bias_sd * z_scores[3];
        let horizon = cfg.discharge_min_hours
            + rng.random::<f64>() * (cfg.discharge_max_hours - cfg.discharge_min_hours);
        let censor_at = if rng.random::<f64>() < cfg.censor_probability {
            Some(12.0 + rng.random::<f64>() * (horizon - 12.0).max(0.0))
        } else {
            None
        };
        let end = censor_at.map_or(horizon, |c| c.min(horizon));

        let static_eta: f64 = (0..self.lab_offset)
            .map(|j| self.beta[j] * (statics[j].unwrap_or(0.0) - static_center(j, cfg)))
            .sum();

        let lab_true = |j: usize, z: f64, idio: &[f64]| -> f64 {
            let (_, _, mean, sd, load) = LABS[j];
            let mut u = idio[j];
            if LABS[j].0 == "rdw_sd" {
                let cv = LABS.iter().position(|l| l.0 == "rdw_cv").expect("rdw_cv present");
                u = RDW_SHARED * idio[cv] + (1.0 - RDW_SHARED * RDW_SHARED).sqrt() * idio[j];
            }
            mean + sd * (load * z + (1.0 - load * load).sqrt() * u)
        };
        let vital_true = |j: usize, z: f64, idio: &[f64]| -> f64 {
            let (_, _, mean, sd, load) = VITALS[j];
            mean + sd * (load * z + 0.3 * idio[LABS.len() + j])
        };

        let mut series: Vec<Vec<Observation>> = vec![Vec::new(); p];
        let mut oxygen = Vec::new();
        let step_h = cfg.flow_interval_hours;
        let mut t = 0.0;
        let mut outcome = None;
        let mut event_time = end;
        let mut next_vital = 0.0;
        let mut next_lab = rng.random::<f64>() * 2.0;
        let hazard = &cfg.hazard;

        while t < end {
            let step_end = (t + step_h).min(end);
            let labs: Vec<f64> = (0..LABS.len()).map(|j| lab_true(j, z, &idio)).collect();
            let vitals: Vec<f64> = (0..VITALS.len()).map(|j| vital_true(j, z, &idio)).collect();
            // observations inside [t, step_end)
            let mut charted: Vec<Option<f64>> = vec![None; VITALS.len()];
            while next_vital < step_end {
                for (k, &v) in vitals.iter().enumerate() {
                    let noise = 0.2 * VITALS[k].3 * rng_normal(&mut rng);
                    let mut value = v + noise;
                    if VITALS[k].0 == "spo2" {
                        value = value.min(100.0);
                    }
                    let value = round_to(value, 1);
                    if next_vital == t {
                        charted[k] = Some(value);
                    }
                    push_obs(&mut series[self.vital_offset + k], next_vital, value);
                }
                next_vital += cfg.vital_interval_hours;
            }

            // a* reads vitals as charted at the decision time when there is
            // a chart entry, so it is a function of the recorded state
            let a_star = self.dose.dose_with(|j| {
                if j < self.lab_offset {
                    statics[j].unwrap_or(0.0)
                } else if j < self.vital_offset {
                    labs[j - self.lab_offset]
                } else {
                    let k = j - self.vital_offset;
                    charted[k].unwrap_or(vitals[k])
                }
            });
            let noise = cfg.step_noise_sd * rng_normal(&mut rng);
            let dose = match cfg.dose_policy {
                DosePolicy::Behavior => a_star + cfg.behavior_bias + patient_bias + noise,
                DosePolicy::Optimal => a_star,
            };
            let dose = ((dose.clamp(0.0, MAX_FLOW)) * 2.0).round() / 2.0;
            oxygen.push(Observation::new(t, dose));
            let dev2 = (dose - a_star).powi(2);
            while next_lab < step_end {
                for (k, &v) in labs.iter().enumerate() {
                    let missing = rng.random::<f64>() < cfg.lab_missing_probability;
                    let noise = 0.1 * LABS[k].3 * rng_normal(&mut rng);
                    if !missing {
                        let digits = if LABS[k].3 < 0.2 { 3 } else { 2 };
                        push_obs(&mut series[self.lab_offset + k], next_lab, round_to(v + noise, digits));
                    }
                }
                next_lab += cfg.lab_interval_hours * (0.9 + 0.2 * rng.random::<f64>());
            }

            let eta: f64 = static_eta
                + labs
                    .iter()
                    .enumerate()
                    .map(|(k, v)| self.beta[self.lab_offset + k] * (v - LABS[k].2))
                    .sum::<f64>();
            let rate = hazard.baseline * (eta + hazard.kappa * dev2).exp();
            let u: f64 = rng.random::<f64>();
            let dt = step_end - t;
            // exponential waiting time within the constant-hazard step
            let wait = -(1.0 - u).ln() / rate;
            if wait < dt {
                event_time = round_to(t + wait, 2).max(t).min(step_end);
                outcome = Some(Outcome::Died);
                break;
            }
            let drift = 0.15 * (severity_mean - 0.02 * t - z);
            z += drift + 0.25 * rng_normal(&mut rng) + hazard.severity_gain * hazard.kappa * dev2;
            t = step_end;
        }
        let outcome = outcome.unwrap_or(if censor_at.is_some_and(|c| c < horizon) {
            Outcome::Censored
        } else {
            Outcome::Discharged
        });
        if outcome != Outcome::Died {
            event_time = end;
        }
        // observations never extend past the event
        for s in &mut series {
            s.retain(|o| o.time <= event_time);
        }
        oxygen.retain(|o| o.time <= event_time);

        PatientRecord {
            patient_id: format!("P{:05}", index + 1),
            hospital_id: hospital,
            static_covariates: statics,
            series,
            oxygen_series: oxygen,
            outcome,
            event_time,
        }
    }
}

/// Centering values for static features in the linear predictor.
fn static_center(j: usize, cfg: &GeneratorConfig) -> f64 {
    match j {
        0 => cfg.age_mean,
        1 => cfg.male_fraction,
        2 => cfg.bmi_mean,
        k => cfg.comorbidity_prevalence[k - 3].1,
    }
}

fn rng_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

fn push_obs(series: &mut Vec<Observation>, time: f64, value: f64) {
    let time = round_to(time, 2);
    if series.last().is_none_or(|o| o.time < time) {
        series.push(Observation::new(time, value));
    }
}
