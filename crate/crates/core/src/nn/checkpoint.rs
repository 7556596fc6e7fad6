//! Versioned JSON container for a network and its optimizer state.
//!
//! Floats are written with round-trip precision, so write → read is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NnError, OptimizerState, Parameters};

const FORMAT: &str = "oxyrl-network";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub format: String,
    pub version: u32,
    pub network: Network,
    pub optimizer: Option<OptimizerState>,
}

impl NetworkCheckpoint {
    pub fn new(network: Network, optimizer: Option<OptimizerState>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            network,
            optimizer,
        }
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string_pretty(self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let ck: Self = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported container {} v{} (expected {FORMAT} v{VERSION})",
                ck.format, ck.version
            )));
        }
        ck.network.validate()?;
        if let Some(opt) = &ck.optimizer {
            let shapes: Vec<usize> = ck.network.tensors().iter().map(|t| t.len()).collect();
            let ok = |acc: &Vec<Vec<f64>>| acc.len() == shapes.len() && acc.iter().zip(&shapes).all(|(a, s)| a.len() == *s);
            if !ok(&opt.m) || !ok(&opt.v) {
                return Err(NnError::Checkpoint("optimizer state does not match the network".into()));
            }
        }
        Ok(ck)
    }
}

pub fn write_checkpoint(path: &Path, ck: &NetworkCheckpoint) -> Result<(), NnError> {
    std::fs::write(path, ck.to_json()?).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<NetworkCheckpoint, NnError> {
    let text = std::fs::read_to_string(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    NetworkCheckpoint::from_json(&text)
}
