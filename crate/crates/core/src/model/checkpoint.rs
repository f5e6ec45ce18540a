//! JSON model checkpoints.
//!
//! ```json
//! { "format": "dynkd-checkpoint", "version": 1, "scalar": "f64",
//!   "config": { "d": .., "k": .., "l": .., "h": .., "g": .., "pipeline": .., "mask": .. },
//!   "seed": .., "table_bound": .., "node_ids": [..],
//!   "params": [ { "name": .., "shape": [..], "values": [..] } ] }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttentionModel, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{ParamRecord, ParamStore};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "dynkd-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub table_bound: f64,
    pub node_ids: Vec<String>,
    pub params: Vec<ParamRecord>,
}

impl<S: Scalar> AttentionModel<S> {
    pub fn to_checkpoint(&self, node_ids: &[String]) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: S::NAME.into(),
            config: *self.config(),
            seed: self.seed(),
            table_bound: self.table_bound(),
            node_ids: node_ids.to_vec(),
            params: self.params().to_records(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let store = ParamStore::from_records(&ck.params)?;
        Self::from_parts(ck.config, store, ck.seed, ck.table_bound)
    }
}

pub fn save_checkpoint<S: Scalar>(
    model: &AttentionModel<S>,
    node_ids: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&model.to_checkpoint(node_ids))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<(AttentionModel<S>, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    Ok((AttentionModel::from_checkpoint(&ck)?, ck.node_ids))
}
