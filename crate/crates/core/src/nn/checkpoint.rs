//! Versioned checkpoint container: architecture, parameters, running
//! statistics, and the training configuration that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkParams, NetworkSpec, TrainConfig};
use crate::error::{Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, config: TrainConfig, params: NetworkParams) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            spec,
            config,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(&path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(&path.display().to_string(), e))?;
        let ckpt: Self =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Serialization(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.spec.validate()?;
        Ok(ckpt)
    }
}
