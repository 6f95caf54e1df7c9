//! JSON checkpoint container.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::objectives::SourceStats;
use crate::tensor::Tensor;

use super::ModelParams;

pub const CHECKPOINT_FORMAT: &str = "s4t-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hash of the run configuration that produced the parameters.
    pub config_hash: String,
    pub params: BTreeMap<String, StoredTensor>,
    /// Source activation statistics, needed by the alignment baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_stats: Option<SourceStats>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams<f32>, config_hash: impl Into<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            params: params
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: v.shape().to_vec(),
                            data: v.data().to_vec(),
                        },
                    )
                })
                .collect(),
            source_stats: None,
        }
    }

    pub fn with_stats(mut self, stats: SourceStats) -> Self {
        self.source_stats = Some(stats);
        self
    }

    pub fn to_params(&self) -> Result<ModelParams<f32>, String> {
        let mut map = BTreeMap::new();
        for (k, st) in &self.params {
            let t = Tensor::new(st.shape.clone(), st.data.clone())
                .map_err(|e| format!("`{k}`: {e}"))?;
            map.insert(k.clone(), t);
        }
        Ok(ModelParams::from_map(map))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> std::io::Result<()> {
    let text = serde_json::to_string(ckpt)?;
    std::fs::write(path, text)
}

pub fn load_checkpoint(path: &Path) -> std::io::Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unsupported checkpoint {} v{}", ck.format, ck.version),
        ));
    }
    Ok(ck)
}
