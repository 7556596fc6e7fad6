//! Long-format cohort CSV.
//!
//! Header `patient_id,hospital_id,time_hours,field,value`; one row per
//! observation. `field` is a schema feature name, `oxygen_flow`, `outcome`
//! (1 = discharged, 0 = died, 2 = censored) or `event_time`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CohortError, FeatureSchema, Observation, Outcome, PatientRecord, MAX_FLOW};

pub const COHORT_HEADER: [&str; 5] = ["patient_id", "hospital_id", "time_hours", "field", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub line: u64,
    pub reason: String,
}

#[derive(Default)]
struct Draft {
    hospital_id: String,
    static_covariates: Vec<Option<f64>>,
    series: Vec<Vec<Observation>>,
    oxygen: Vec<Observation>,
    outcome: Option<Outcome>,
    event_time: Option<f64>,
}

/// Reads a cohort file, validating every row against `schema`.
///
/// Row-level problems (out-of-range flow, non-monotone times, bad codes) are
/// collected and reported together; structural problems (header, unknown
/// fields, features absent from the whole file) are schema mismatches.
pub fn load_cohort(path: &Path, schema: &FeatureSchema) -> Result<Vec<PatientRecord>, CohortError> {
    let file = std::fs::File::open(path).map_err(|source| CohortError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_cohort_from(file, schema)
}

pub fn load_cohort_from<R: std::io::Read>(
    reader: R,
    schema: &FeatureSchema,
) -> Result<Vec<PatientRecord>, CohortError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CohortError::SchemaMismatch(format!("unreadable header: {e}")))?
        .clone();
    if header.iter().ne(COHORT_HEADER.iter().copied()) {
        return Err(CohortError::SchemaMismatch(format!(
            "header must be `{}`, got `{}`",
            COHORT_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let p = schema.len();
    let mut order: Vec<String> = Vec::new();
    let mut drafts: HashMap<String, Draft> = HashMap::new();
    let mut seen_feature = vec![false; p];
    let mut rejected = Vec::new();

    for row in rdr.records() {
        let row = row.map_err(|e| CohortError::Row {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let patient = &row[0];
        let hospital = &row[1];
        let field = &row[3];
        let time: f64 = row[2].parse().map_err(|_| CohortError::Row {
            line,
            reason: format!("time_hours `{}` is not a number", &row[2]),
        })?;
        let value: f64 = row[4].parse().map_err(|_| CohortError::Row {
            line,
            reason: format!("value `{}` is not a number", &row[4]),
        })?;
        if patient.is_empty() {
            rejected.push(RowDiagnostic {
                line,
                reason: "empty patient_id".into(),
            });
            continue;
        }

        let draft = drafts.entry(patient.to_string()).or_insert_with(|| {
            order.push(patient.to_string());
            Draft {
                hospital_id: hospital.to_string(),
                static_covariates: vec![None; p],
                series: vec![Vec::new(); p],
                ..Default::default()
            }
        });
        let mut reject = |reason: String| rejected.push(RowDiagnostic { line, reason });
        if draft.hospital_id != hospital {
            reject(format!(
                "patient {patient} listed under hospital `{hospital}` and `{}`",
                draft.hospital_id
            ));
            continue;
        }
        if !(time.is_finite() && time >= 0.0) {
            reject(format!("time_hours {time} must be a non-negative number"));
            continue;
        }
        if !value.is_finite() {
            reject(format!("value {value} is not finite"));
            continue;
        }

        match field {
            "oxygen_flow" => {
                if !(0.0..=MAX_FLOW).contains(&value) {
                    reject(format!("oxygen_flow {value} outside the bound [0,60] L/min"));
                } else if draft.oxygen.last().is_some_and(|o| o.time >= time) {
                    reject(format!("oxygen_flow time {time} is not strictly increasing"));
                } else {
                    draft.oxygen.push(Observation::new(time, value));
                }
            }
            "outcome" => match Outcome::from_code(value) {
                _ if draft.outcome.is_some() => reject("duplicate outcome".into()),
                Some(o) => draft.outcome = Some(o),
                None => reject(format!("outcome code {value} must be 0, 1 or 2")),
            },
            "event_time" => {
                if draft.event_time.is_some() {
                    reject("duplicate event_time".into());
                } else if value < 0.0 {
                    reject(format!("event_time {value} is negative"));
                } else {
                    draft.event_time = Some(value);
                }
            }
            name => {
                let Some(j) = schema.index_of(name) else {
                    return Err(CohortError::SchemaMismatch(format!(
                        "line {line}: field `{name}` is not in the schema"
                    )));
                };
                seen_feature[j] = true;
                if schema.kind(j).is_time_invariant() {
                    if draft.static_covariates[j].is_some() {
                        reject(format!("duplicate static value for `{name}`"));
                    } else {
                        draft.static_covariates[j] = Some(value);
                    }
                } else if draft.series[j].last().is_some_and(|o| o.time >= time) {
                    reject(format!("`{name}` time {time} is not strictly increasing"));
                } else {
                    draft.series[j].push(Observation::new(time, value));
                }
            }
        }
    }

    if !rejected.is_empty() {
        return Err(CohortError::RejectedRows(rejected));
    }
    let missing: Vec<&str> = schema
        .names()
        .iter()
        .zip(&seen_feature)
        .filter(|(_, seen)| !**seen)
        .map(|(n, _)| n.as_str())
        .collect();
    if !order.is_empty() && !missing.is_empty() {
        return Err(CohortError::SchemaMismatch(format!(
            "file has no rows for schema feature(s): {}",
            missing.join(", ")
        )));
    }

    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let d = drafts.remove(&id).expect("draft exists for every ordered id");
        let outcome = d.outcome.ok_or_else(|| CohortError::InvalidRecord {
            patient: id.clone(),
            reason: "missing outcome row".into(),
        })?;
        let event_time = d.event_time.ok_or_else(|| CohortError::InvalidRecord {
            patient: id.clone(),
            reason: "missing event_time row".into(),
        })?;
        let record = PatientRecord {
            patient_id: id,
            hospital_id: d.hospital_id,
            static_covariates: d.static_covariates,
            series: d.series,
            oxygen_series: d.oxygen,
            outcome,
            event_time,
        };
        record.validate(schema)?;
        records.push(record);
    }
    Ok(records)
}

/// Serializes records in the long CSV layout. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_cohort<W: Write>(
    mut out: W,
    records: &[PatientRecord],
    schema: &FeatureSchema,
) -> std::io::Result<()> {
    let mut buf = String::new();
    buf.push_str(&COHORT_HEADER.join(","));
    buf.push('\n');
    for r in records {
        let (pid, hid) = (&r.patient_id, &r.hospital_id);
        for (j, name) in schema.names().iter().enumerate() {
            if let Some(v) = r.static_covariates[j] {
                let _ = writeln!(buf, "{pid},{hid},0,{name},{v}");
            }
            for o in &r.series[j] {
                let _ = writeln!(buf, "{pid},{hid},{},{name},{}", o.time, o.value);
            }
        }
        for o in &r.oxygen_series {
            let _ = writeln!(buf, "{pid},{hid},{},oxygen_flow,{}", o.time, o.value);
        }
        let _ = writeln!(buf, "{pid},{hid},{t},event_time,{t}", t = r.event_time);
        let _ = writeln!(buf, "{pid},{hid},{},outcome,{}", r.event_time, r.outcome.code());
        if buf.len() > 1 << 16 {
            out.write_all(buf.as_bytes())?;
            buf.clear();
        }
    }
    out.write_all(buf.as_bytes())?;
    out.flush()
}

pub fn write_cohort_file(
    path: &Path,
    records: &[PatientRecord],
    schema: &FeatureSchema,
) -> Result<(), CohortError> {
    let io_err = |source| CohortError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_cohort(std::io::BufWriter::new(file), records, schema).map_err(io_err)
}
