//! Versioned JSON snapshots of a trained model. Floats are written with
//! round-trip precision, so a reloaded model predicts bit-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputNorm, LstmFcn, ModelConfig, RunningStats};
use crate::error::{Error, Result};
use crate::math::{ParamBlock, Tensor2};

pub const CHECKPOINT_FORMAT: &str = "staytsc-lstm-fcn";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Free-form provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    pub val_accuracy: Option<f64>,
    /// Class names in label order.
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredBlock {
    name: String,
    weights: Tensor2,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    input_norm: InputNorm,
    #[serde(default)]
    bn_running: Vec<RunningStats>,
    blocks: Vec<StoredBlock>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_model(model: &LstmFcn, meta: CheckpointMeta) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            seed: model.seed,
            input_norm: model.input_norm,
            bn_running: model.bn_running.clone(),
            blocks: model
                .blocks
                .iter()
                .map(|b| StoredBlock {
                    name: b.name.clone(),
                    weights: b.weights.clone(),
                    bias: b.bias.clone(),
                })
                .collect(),
            meta,
        }
    }

    /// Rebuilds the model. Optimizer moments are not part of a checkpoint.
    pub fn to_model(&self) -> Result<LstmFcn> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| ParamBlock::new(b.name.clone(), b.weights.clone(), b.bias.clone()))
            .collect();
        LstmFcn::from_parts(self.config.clone(), blocks, self.input_norm, self.bn_running.clone(), self.seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a model checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
