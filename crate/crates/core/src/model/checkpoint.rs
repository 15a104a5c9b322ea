//! Binary checkpoint files.
//!
//! ```text
//! magic        8 bytes  "XKDCKPT\0"
//! version      u32 LE
//! header_len   u32 LE
//! header       header_len bytes of UTF-8 JSON {architecture, meta}
//! param_count  u64 LE
//! params       param_count × f64 LE, in declared layout order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::convnet::{Architecture, ConvNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XKDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    /// Epoch the parameters come from (0 = untrained).
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub init: String,
    pub frozen: bool,
    /// Validation accuracy at `epoch`, when known.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_model(model: &ConvNet, mut meta: CheckpointMeta) -> Self {
        meta.frozen = model.is_frozen();
        if meta.init.is_empty() {
            meta.init = "kaiming_uniform_fan_in".into();
        }
        Self {
            architecture: model.architecture().clone(),
            meta,
            params: model.parameters().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<ConvNet> {
        let frozen = self.meta.frozen;
        let model = ConvNet::from_parameters(self.architecture, self.params)?;
        Ok(if frozen { model.freeze() } else { model })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            architecture: self.architecture.clone(),
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated file"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = take(count.checked_mul(8).ok_or_else(|| bad("parameter count overflow"))?)?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            architecture: header.architecture,
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputShape;

    #[test]
    fn rejects_corruption() {
        let net = ConvNet::new(
            Architecture {
                name: "t".into(),
                input: InputShape::new(1, 2, 2),
                conv_channels: vec![1],
                num_classes: 2,
                dropout: 0.0,
                coord_channels: false,
            },
            1,
        )
        .unwrap();
        let bytes = Checkpoint::from_model(&net, CheckpointMeta::default()).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Checkpoint::from_bytes(&v2).is_err());
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
        assert_eq!(back, net);
    }
}
