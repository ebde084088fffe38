//! JSON checkpoints: everything needed to score new data with a trained
//! model. Serialization is deterministic, so identical runs produce
//! identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{Dense, DetectLossConfig, DetectorModel, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::NormalizationStats;
use crate::transfer::{Sharing, TransferModel};

pub const FORMAT: &str = "flowattn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSection {
    pub sharing: Sharing,
    pub lambdas: Vec<f64>,
    pub target_decoders: Vec<Dense>,
    pub source_curve: Vec<f64>,
    pub target_curves: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub feature_columns: Vec<String>,
    pub normalization: NormalizationStats,
    pub model_config: ModelConfig,
    pub train: TrainConfig,
    pub loss: DetectLossConfig,
    pub model: DetectorModel,
    /// Training curve (entry 0 before the first update).
    pub curve: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSection>,
}

impl Checkpoint {
    pub fn new(
        feature_columns: Vec<String>,
        normalization: NormalizationStats,
        train: TrainConfig,
        loss: DetectLossConfig,
        model: DetectorModel,
        curve: Vec<f64>,
    ) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            feature_columns,
            normalization,
            model_config: model.config(),
            train,
            loss,
            model,
            curve,
            transfer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Mismatch(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Mismatch(format!(
                "checkpoint version {} is not supported (expected {VERSION})",
                self.version
            )));
        }
        let n = self.model.n_features();
        if self.feature_columns.len() != n || self.normalization.mean.len() != n || self.normalization.std.len() != n {
            return Err(Error::Mismatch(format!(
                "checkpoint is inconsistent: model has {n} features, {} column names, {} normalization entries",
                self.feature_columns.len(),
                self.normalization.mean.len()
            )));
        }
        if self.model_config != self.model.config() {
            return Err(Error::Mismatch(
                "checkpoint model_config does not describe the stored model".into(),
            ));
        }
        Ok(())
    }

    /// Errors unless `columns` are exactly the columns the model was trained on.
    pub fn check_columns(&self, columns: &[String]) -> Result<()> {
        if columns != self.feature_columns.as_slice() {
            return Err(Error::Mismatch(format!(
                "data columns {columns:?} do not match the checkpoint's {:?}",
                self.feature_columns
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Mismatch(format!("unreadable checkpoint: {e}")))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Stores an adapted model: the shared part replaces `model`, the target
    /// decoders go to the transfer section.
    pub fn with_transfer(
        mut self,
        adapted: TransferModel,
        lambdas: Vec<f64>,
        source_curve: Vec<f64>,
        target_curves: Vec<Vec<f64>>,
    ) -> Self {
        self.model = adapted.shared;
        self.model_config = self.model.config();
        self.transfer = Some(TransferSection {
            sharing: adapted.sharing,
            lambdas,
            target_decoders: adapted.target_decoders,
            source_curve,
            target_curves,
        });
        self
    }

    /// The detector for target task `task`, or the source detector when the
    /// checkpoint has no transfer section or `task` is `None`.
    pub fn detector_for(&self, task: Option<usize>) -> Result<DetectorModel> {
        match (task, &self.transfer) {
            (None, _) => Ok(self.model.clone()),
            (Some(i), Some(t)) => TransferModel {
                shared: self.model.clone(),
                sharing: t.sharing,
                target_decoders: t.target_decoders.clone(),
            }
            .task_model(i),
            (Some(_), None) => Err(Error::Mismatch("checkpoint has no transfer section".into())),
        }
    }
}
