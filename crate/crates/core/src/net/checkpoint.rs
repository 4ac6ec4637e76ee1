//! Checkpoint files: `B2PW`, u32 version, u32 manifest length, the JSON
//! manifest, then every tensor as little-endian `f32` in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{B2PModel, ModelConfig};
use crate::mat::Mat;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"B2PW";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Kernel offsets are stored in Morton order of `offset + center`, x fastest.
pub const OFFSET_ORDER: &str = "morton-xyz";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// The part of the manifest that identifies the model; its hash goes into
/// every bitstream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: ModelConfig,
    pub offset_order: String,
    pub tensors: Vec<TensorEntry>,
    pub data_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FileManifest {
    model: ModelManifest,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tensor_bytes(model: &B2PModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.store.num_scalars() * 4);
    for (_, _, m) in model.store.iter() {
        for v in m.as_slice() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

impl B2PModel {
    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            config: self.config,
            offset_order: OFFSET_ORDER.into(),
            tensors: self
                .store
                .iter()
                .map(|(_, name, m)| TensorEntry {
                    name: name.into(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
            data_sha256: hex(&Sha256::digest(tensor_bytes(self))),
        }
    }

    /// First 8 bytes (little endian) of the SHA-256 of the model manifest.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let d = Sha256::digest(&json);
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: BTreeMap<String, serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        let manifest = FileManifest {
            model: self.manifest(),
            meta,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&tensor_bytes(self));
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, rebuilding the architecture from its config and
    /// checking every tensor name and shape against it.
    pub fn load(path: impl AsRef<Path>) -> Result<(B2PModel, BTreeMap<String, serde_json::Value>)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(B2PModel, BTreeMap<String, serde_json::Value>)> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes
            .get(12..12 + len)
            .ok_or_else(|| Error::Truncated("checkpoint manifest".into()))?;
        let manifest: FileManifest = serde_json::from_slice(json).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if manifest.model.offset_order != OFFSET_ORDER {
            return Err(Error::Format(format!("unknown offset order {}", manifest.model.offset_order)));
        }
        let mut model = B2PModel::new(manifest.model.config, 0)?;
        let expected: Vec<TensorEntry> = model.manifest().tensors;
        if expected != manifest.model.tensors {
            let bad = expected
                .iter()
                .zip(&manifest.model.tensors)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{} {}x{} vs stored {} {}x{}", a.name, a.rows, a.cols, b.name, b.rows, b.cols))
                .unwrap_or_else(|| "tensor count differs".into());
            return Err(Error::Dimension(format!("checkpoint does not match the architecture: {bad}")));
        }
        let data = &bytes[12 + len..];
        if data.len() != model.store.num_scalars() * 4 {
            return Err(Error::Truncated("checkpoint tensor data".into()));
        }
        if hex(&Sha256::digest(data)) != manifest.model.data_sha256 {
            return Err(Error::Checksum("checkpoint tensor data".into()));
        }
        let mut at = 0;
        for id in 0..model.store.len() {
            let (r, c) = model.store.get(id).shape();
            let vals = data[at..at + r * c * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            at += r * c * 4;
            *model.store.get_mut(id) = Mat::from_vec(r, c, vals)?;
        }
        Ok((model, manifest.meta))
    }
}
