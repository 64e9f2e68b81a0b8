use std::fs;
use std::path::Path;

use remos_autodiff::{NamedTensor, OptimizerState, ParamStore};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::denoiser::{BatchNormBuffers, DenoiserNet, Stage};
use crate::error::{CoreError, Result};

pub const CHECKPOINT_FORMAT: &str = "remos-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub stage: Stage,
    pub config: TrainConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub params: Vec<NamedTensor>,
    pub bn: BatchNormBuffers,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn to_net(&self) -> Result<DenoiserNet> {
        let store = ParamStore::from_named(&self.params)?;
        DenoiserNet::from_parts(self.config.denoiser.clone(), store, self.bn.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(self).map_err(|e| CoreError::Checkpoint(e.to_string()))
    }

    /// Parses and checks the header; `expected` rejects the other stage.
    pub fn from_bytes(bytes: &[u8], expected: Option<Stage>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
            stage: Stage,
        }
        let header: Header =
            serde_json::from_slice(bytes).map_err(|e| CoreError::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(CoreError::Checkpoint(format!("not a checkpoint (format `{}`)", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        if let Some(stage) = expected.filter(|s| *s != header.stage) {
            return Err(CoreError::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                stage.name(),
                header.stage.name()
            )));
        }
        let ckpt: Self =
            serde_json::from_slice(bytes).map_err(|e| CoreError::Checkpoint(format!("corrupted checkpoint: {e}")))?;
        if ckpt.config.stage != ckpt.stage || ckpt.config.denoiser.stage != ckpt.stage {
            return Err(CoreError::Checkpoint("stage tag disagrees with the stored config".into()));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<Stage>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes, expected).map_err(|e| match e {
        CoreError::Checkpoint(m) => CoreError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
