use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DescriptorConfig, ForceField, LossCoefficients, MlpArchitecture, Normalization, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ttflab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How the model was trained. Contains no wall-clock data so that reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub optimizer: String,
    pub rho: f64,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stop_reason: String,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub loss_coefficients: LossCoefficients,
    /// Force term normalization: mean over atoms and Cartesian components.
    pub force_loss: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub descriptor: DescriptorConfig,
    pub architecture: MlpArchitecture,
    pub normalization: Normalization,
    pub weights: ParamVector,
    pub metadata: Option<TrainingMetadata>,
}

impl Checkpoint {
    pub fn from_model(model: &ForceField, metadata: Option<TrainingMetadata>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            descriptor: model.descriptor.clone(),
            architecture: model.arch.clone(),
            normalization: model.norm.clone(),
            weights: model.params.clone(),
            metadata,
        }
    }

    pub fn model(&self) -> Result<ForceField> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        ForceField::new(
            self.descriptor.clone(),
            self.architecture.clone(),
            self.normalization.clone(),
            self.weights.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
