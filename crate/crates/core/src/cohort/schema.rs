use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CohortError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Time-invariant demographic value (age, sex, BMI).
    Static,
    Lab,
    Vital,
    /// 0/1 comorbidity indicator, time-invariant.
    Comorbidity,
}

impl FeatureKind {
    /// Static and comorbidity features are recorded once per patient.
    pub fn is_time_invariant(self) -> bool {
        matches!(self, FeatureKind::Static | FeatureKind::Comorbidity)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Static => "static",
            FeatureKind::Lab => "lab",
            FeatureKind::Vital => "vital",
            FeatureKind::Comorbidity => "comorbidity",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(FeatureKind::Static),
            "lab" => Ok(FeatureKind::Lab),
            "vital" => Ok(FeatureKind::Vital),
            "comorbidity" => Ok(FeatureKind::Comorbidity),
            other => Err(format!("unknown feature kind `{other}`")),
        }
    }
}

/// Names reserved for non-state fields of the cohort CSV.
pub(crate) const RESERVED_FIELDS: [&str; 3] = ["oxygen_flow", "outcome", "event_time"];

/// Ordered state-feature layout. The oxygen flow is the action and never a
/// state feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    units: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl FeatureSchema {
    pub fn new(features: Vec<(String, FeatureKind, String)>) -> Result<Self, CohortError> {
        let mut names = Vec::with_capacity(features.len());
        let mut kinds = Vec::with_capacity(features.len());
        let mut units = Vec::with_capacity(features.len());
        let mut index = HashMap::new();
        for (i, (name, kind, unit)) in features.into_iter().enumerate() {
            if name.is_empty() || name.contains(',') {
                return Err(CohortError::SchemaMismatch(format!("invalid feature name `{name}`")));
            }
            if RESERVED_FIELDS.contains(&name.as_str()) {
                return Err(CohortError::SchemaMismatch(format!(
                    "`{name}` is reserved and cannot be a state feature"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(CohortError::SchemaMismatch(format!("duplicate feature `{name}`")));
            }
            names.push(name);
            kinds.push(kind);
            units.push(unit);
        }
        if names.is_empty() {
            return Err(CohortError::SchemaMismatch("schema has no features".into()));
        }
        Ok(Self {
            names,
            kinds,
            units,
            index,
        })
    }

    /// Parses the `name,kind,unit` per-line schema format.
    pub fn parse(text: &str) -> Result<Self, CohortError> {
        let mut features = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(CohortError::SchemaSyntax {
                    line: i + 1,
                    reason: format!("expected `name,kind,unit`, got `{line}`"),
                });
            }
            let kind = parts[1].parse().map_err(|reason| CohortError::SchemaSyntax {
                line: i + 1,
                reason,
            })?;
            features.push((parts[0].to_string(), kind, parts[2].to_string()));
        }
        Self::new(features)
    }

    pub fn read(path: &Path) -> Result<Self, CohortError> {
        let text = std::fs::read_to_string(path).map_err(|source| CohortError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            out.push_str(&format!("{},{},{}\n", self.names[i], self.kinds[i], self.units[i]));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn kind(&self, j: usize) -> FeatureKind {
        self.kinds[j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let schema = FeatureSchema::parse("# demo\nage,static,years\nph,lab,pH\nspo2,vital,%\n").unwrap();
        assert_eq!(schema.len(), 3);
        assert_eq!(schema.index_of("ph"), Some(1));
        assert_eq!(FeatureSchema::parse(&schema.render()).unwrap(), schema);
    }

    #[test]
    fn rejects_duplicates_and_reserved_names() {
        assert!(FeatureSchema::parse("a,lab,u\na,vital,u").is_err());
        assert!(FeatureSchema::parse("oxygen_flow,vital,L/min").is_err());
        assert!(matches!(
            FeatureSchema::parse("a,bogus,u"),
            Err(CohortError::SchemaSyntax { line: 1, .. })
        ));
    }
}
