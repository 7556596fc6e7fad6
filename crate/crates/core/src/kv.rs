//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Values are kept as strings until a typed config consumes them, so
//! command-line overrides and file values share one code path.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    Parse {
        key: String,
        value: String,
        reason: String,
    },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown configuration keys: {}", .0.join(", "))]
    Unknown(Vec<String>),
}

/// Ordered string map of configuration entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(KvError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(KvError::Duplicate {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|source| KvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets `key`, replacing any previous value (command-line overrides).
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Removes and parses `key`, returning `None` when absent.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>, KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(value) => value.parse::<T>().map(Some).map_err(|e| KvError::Parse {
                key: key.to_string(),
                value,
                reason: e.to_string(),
            }),
        }
    }

    /// Removes and parses a comma-separated list.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>, KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(value) => value
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|e| KvError::Parse {
                        key: key.to_string(),
                        value: value.clone(),
                        reason: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Fails if any key was never consumed.
    pub fn ensure_consumed(&self) -> Result<(), KvError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(KvError::Unknown(self.entries.keys().cloned().collect()))
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Renders entries in key order, one per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let mut kv = KeyValues::parse("# generator\nn_patients = 12\n\nkappa=0.5\nweights = 1, 2,3\n")
            .unwrap();
        assert_eq!(kv.take::<usize>("n_patients").unwrap(), Some(12));
        assert_eq!(kv.take::<f64>("kappa").unwrap(), Some(0.5));
        assert_eq!(
            kv.take_list::<f64>("weights").unwrap(),
            Some(vec![1.0, 2.0, 3.0])
        );
        assert_eq!(kv.take::<f64>("missing").unwrap(), None);
        kv.ensure_consumed().unwrap();
    }

    #[test]
    fn rejects_bad_lines_and_leftovers() {
        assert!(matches!(
            KeyValues::parse("no equals sign"),
            Err(KvError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            KeyValues::parse("a = 1\na = 2"),
            Err(KvError::Duplicate { line: 2, .. })
        ));
        let mut kv = KeyValues::parse("seed = abc\nextra = 1").unwrap();
        assert!(matches!(kv.take::<u64>("seed"), Err(KvError::Parse { .. })));
        assert!(matches!(kv.ensure_consumed(), Err(KvError::Unknown(k)) if k == vec!["extra"]));
    }

    #[test]
    fn override_wins() {
        let mut kv = KeyValues::parse("seed = 1").unwrap();
        kv.set("seed", 7);
        assert_eq!(kv.take::<u64>("seed").unwrap(), Some(7));
    }
}
