//! Memory-based temporal graph model over the edge stream.

mod forward;
mod params;
mod state;
pub mod tape;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use forward::{AttentionRecord, Forward};
pub use params::{Adam, GruIds, LayerIds, MemoryCell, ModelConfig, ModelParams, ParamIds};
pub use state::{Interaction, RawMessage, TemporalState};
pub use train::{
    batch_loss, collect_contexts, fresh_state, positives, predict_next_events, replay,
    sample_negatives, train, BatchContext, EdgePairs, EpochStats, SeriesForecast, TrainConfig,
    TrainedModel,
};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters plus the memory state at the end of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    /// Number of training windows; test windows continue the clock from here.
    pub train_windows: usize,
    pub history: Vec<EpochStats>,
    pub params: ModelParams,
    pub state: TemporalState,
}

impl Checkpoint {
    pub fn new(model: TrainedModel, train_windows: usize, config_hash: impl Into<String>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            train_windows,
            history: model.history,
            params: model.params,
            state: model.state,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        if ck.state.n_nodes() != ck.params.n_nodes() {
            return Err(Error::Format(
                "checkpoint state and parameters disagree on node count".into(),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
