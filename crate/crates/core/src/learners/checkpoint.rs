//! Checkpoint layout: one line of JSON header terminated by `\n`, followed by
//! every parameter as little-endian `f64` in `EmbeddingNet::params` order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::head::HeadConfig;
use super::net::EmbeddingNet;
use crate::error::{Error, Result};
use crate::ndcore::OptimizerState;

pub const CHECKPOINT_FORMAT: &str = "hardlab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub head: HeadConfig,
    pub epoch: usize,
    pub param_count: usize,
}

/// Everything the training loop mutates.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub net: EmbeddingNet,
    pub head: HeadConfig,
    pub optimizer: OptimizerState,
    pub epoch: usize,
}

impl ModelState {
    pub fn new(net: EmbeddingNet, head: HeadConfig, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        head.validate()?;
        let shapes = net.param_shapes();
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let optimizer = OptimizerState::new(lr, momentum, weight_decay, &refs)?;
        Ok(ModelState { net, head, optimizer, epoch: 0 })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            head: self.head,
            epoch: self.epoch,
        }
    }
}

/// Serializable model snapshot (parameters, head, epoch; no optimizer velocity).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: EmbeddingNet,
    pub head: HeadConfig,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.net.sizes().to_vec(),
            head: self.head,
            epoch: self.epoch,
            param_count: self.net.param_count(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for v in self.net.flat_params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.param_count * 8 {
            return Err(Error::Checkpoint(format!(
                "parameter block has {} bytes, header promises {} values",
                body.len(),
                header.param_count
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut net = EmbeddingNet::init(&header.layer_sizes, 0)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if net.param_count() != header.param_count {
            return Err(Error::Checkpoint("param_count disagrees with layer sizes".into()));
        }
        net.set_flat_params(&flat)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        header.head.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { net, head: header.head, epoch: header.epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_exact_roundtrip() {
        let ck = Checkpoint {
            net: EmbeddingNet::init(&[5, 7, 3], 42).unwrap(),
            head: HeadConfig::ridge(0.5),
            epoch: 12,
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let ck = Checkpoint {
            net: EmbeddingNet::init(&[2, 3], 1).unwrap(),
            head: HeadConfig::proto(),
            epoch: 0,
        };
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"garbage"), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"{}\n"), Err(Error::Checkpoint(_))));
    }
}
