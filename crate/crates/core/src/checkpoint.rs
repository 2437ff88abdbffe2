//! JSON checkpoints: model configuration, standardization, every θ tensor by
//! name, and optionally the variational state. Floats round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::inference::VariationalState;
use crate::model::{GenerativeParams, ModelConfig};
use crate::tensor::Tensor;

pub const FORMAT: &str = "dsvar-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variational: Option<VariationalState>,
    /// Free-form run metadata (training settings, trial names, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: &GenerativeParams, seed: u64) -> Self {
        let tensors = params
            .names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| NamedTensor {
                name,
                shape: [t.rows(), t.cols()],
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed,
            config: params.config.clone(),
            standardization: None,
            tensors,
            variational: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn with_standardization(mut self, s: Standardization) -> Self {
        self.standardization = Some(s);
        self
    }

    pub fn with_variational(mut self, v: VariationalState) -> Self {
        self.variational = Some(v);
        self
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = meta;
        self
    }

    /// Rebuilds θ, checking every name and shape against the configuration.
    pub fn params(&self) -> Result<GenerativeParams> {
        let mut params = GenerativeParams::init(&self.config, &mut RngStream::new(0))?;
        let names = params.names();
        if names.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, configuration needs {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for ((slot, name), stored) in params.tensors_mut().into_iter().zip(&names).zip(&self.tensors) {
            if &stored.name != name {
                return Err(Error::Format(format!("expected tensor {name}, found {}", stored.name)));
            }
            if stored.shape != [slot.rows(), slot.cols()] {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {}x{}",
                    stored.shape,
                    slot.rows(),
                    slot.cols()
                )));
            }
            *slot = Tensor::new(stored.shape[0], stored.shape[1], stored.data.clone())
                .map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Format(format!("not a checkpoint (format {:?})", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.config.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig::new(2, 3, vec![1, 2], 4);
        let params = GenerativeParams::init(&cfg, &mut RngStream::new(9)).unwrap();
        let ck = Checkpoint::new(&params, 9);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let restored = back.params().unwrap();
        for (a, b) in restored.tensors().iter().zip(params.tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn wrong_format_rejected() {
        let cfg = ModelConfig::new(1, 1, vec![1], 1);
        let params = GenerativeParams::init(&cfg, &mut RngStream::new(0)).unwrap();
        let mut ck = Checkpoint::new(&params, 0);
        ck.format = "other".into();
        let err = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = ModelConfig::new(1, 2, vec![1], 3);
        let params = GenerativeParams::init(&cfg, &mut RngStream::new(0)).unwrap();
        let mut ck = Checkpoint::new(&params, 0);
        ck.tensors[0].shape = [3, 2];
        assert!(matches!(ck.params(), Err(Error::Format(_))));
    }
}
