use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::fno::{FnoConfig, FnoParams};
use crate::normalize::NormalizationReferences;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: u32 = 1;
const JSON_NAME: &str = "checkpoint.json";
const WEIGHTS_NAME: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub train_config: Option<TrainConfig>,
    pub best_val_loss: Option<f64>,
    /// 0 is the parameters before any update.
    pub best_epoch: Option<usize>,
    pub grid: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: FnoConfig,
    pub params: FnoParams<T>,
    pub refs: NormalizationReferences,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    scalar: String,
    param_count: usize,
    config: FnoConfig,
    refs: NormalizationReferences,
    provenance: Provenance,
}

impl<T: Scalar> Checkpoint<T> {
    /// Weights as little-endian f64 in layout order.
    pub fn weight_bytes(&self) -> Vec<u8> {
        self.params.values.iter().flat_map(|v| v.f64().to_le_bytes()).collect()
    }

    /// Hex SHA-256 of [`Self::weight_bytes`].
    pub fn weights_hash(&self) -> String {
        Sha256::digest(self.weight_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = Header {
            format: CHECKPOINT_FORMAT,
            scalar: T::NAME.to_string(),
            param_count: self.params.len(),
            config: self.config,
            refs: self.refs.clone(),
            provenance: self.provenance.clone(),
        };
        fs::write(dir.join(JSON_NAME), serde_json::to_string_pretty(&header)?)?;
        fs::write(dir.join(WEIGHTS_NAME), self.weight_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: Header = serde_json::from_str(&fs::read_to_string(dir.join(JSON_NAME))?)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {}", header.format)));
        }
        header.refs.validate()?;
        let bytes = fs::read(dir.join(WEIGHTS_NAME))?;
        if bytes.len() != header.param_count * 8 || header.param_count != header.config.param_count() {
            return Err(Error::Format(format!(
                "weights.bin holds {} bytes, expected {} parameters",
                bytes.len(),
                header.config.param_count()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        Ok(Self {
            config: header.config,
            params: FnoParams::from_values(header.config, values)?,
            refs: header.refs,
            provenance: header.provenance,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Checkpoint<U> {
        Checkpoint {
            config: self.config,
            params: self.params.cast(),
            refs: self.refs.clone(),
            provenance: self.provenance.clone(),
        }
    }
}
