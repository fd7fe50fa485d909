//! Self-describing JSON checkpoints.
//!
//! ```json
//! {"format": "sentipipe-checkpoint", "version": 1, "float_width": 64,
//!  "config": {"family": "cnn", ...}, "vocab": null,
//!  "params": [{"name": "cnn.conv2.w", "rows": 600, "cols": 100, "data": [...]}]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, ModelConfig, Vocab};
use crate::error::{read_to_string, Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT: &str = "sentipipe-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLOAT_WIDTH: u32 = 64;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    float_width: u32,
    config: ModelConfig,
    vocab: Option<Vocab>,
    params: Vec<StoredParam>,
}

impl Classifier {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            float_width: FLOAT_WIDTH,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self
                .params
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        };
        if file.params.iter().any(|p| p.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("cannot checkpoint non-finite parameters".into()));
        }
        serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
        }
        if file.float_width != FLOAT_WIDTH {
            return Err(Error::Checkpoint(format!("unsupported float width {}", file.float_width)));
        }
        let mut clf = Classifier::new(file.config, file.vocab, 0)?;
        let tensors = file
            .params
            .into_iter()
            .map(|p| {
                let t = Tensor::new(p.rows, p.cols, p.data)
                    .map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", p.name)))?;
                Ok((p.name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        clf.load_values(tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        Ok(clf)
    }
}

pub fn save_checkpoint(classifier: &Classifier, path: &Path) -> Result<()> {
    let json = classifier.to_checkpoint_json()?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    Classifier::from_checkpoint_json(&read_to_string(path)?)
}
