//! Versioned JSON checkpoint container: model kind + config, all parameter
//! tensors, the fitted scaler, and training metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ScalerParams, Setting};
use crate::error::ModelError;
use crate::gru::{GruConfig, GruModel};
use crate::model::{GadformerModel, GroupScorer, ModelConfig, ModelKind, ParamSet};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub params: ParamSet,
    pub scaler: Option<ScalerParams>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub setting: Option<Setting>,
    pub best_epoch: Option<usize>,
    pub val_loss: Option<f64>,
    pub epochs_run: Option<usize>,
}

impl Checkpoint {
    pub fn from_model(
        model: &dyn GroupScorer,
        scaler: Option<ScalerParams>,
        meta: CheckpointMeta,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            kind: model.kind(),
            config: model.config_value(),
            params: model.params().clone(),
            scaler,
            meta,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = File::create(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ModelError::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported format version {} (expected {CHECKPOINT_VERSION})",
                    ckpt.format_version
                ),
            });
        }
        Ok(ckpt)
    }

    /// Instantiate the stored model; fails when config and parameters do
    /// not line up.
    pub fn build_model(&self) -> Result<Box<dyn GroupScorer>, ModelError> {
        match self.kind {
            ModelKind::Gadformer => {
                let config: ModelConfig = serde_json::from_value(self.config.clone())
                    .map_err(|e| ModelError::ConfigMismatch(e.to_string()))?;
                Ok(Box::new(GadformerModel::from_params(config, self.params.clone())?))
            }
            ModelKind::Gru => {
                let config: GruConfig = serde_json::from_value(self.config.clone())
                    .map_err(|e| ModelError::ConfigMismatch(e.to_string()))?;
                Ok(Box::new(GruModel::from_params(config, self.params.clone())?))
            }
        }
    }

    /// Error unless the stored config equals the expected one.
    pub fn ensure_config(&self, expected: &serde_json::Value) -> Result<(), ModelError> {
        if &self.config != expected {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint config {} differs from expected {}",
                self.config, expected
            )));
        }
        Ok(())
    }
}
