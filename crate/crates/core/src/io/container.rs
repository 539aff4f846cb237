//! Weight container: a JSON manifest next to one binary blob.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "blob": "weights.bin",
//!   "layers": [
//!     { "layer_id": "enc.attn1", "d": 512, "dtype": "f32",
//!       "offsets": { "w_q": 0, "w_k": 1048576, "w_v": 2097152 } }
//!   ]
//! }
//! ```
//!
//! Each matrix is stored row-major, little-endian, `d·d` elements of `dtype`
//! starting at its byte offset. `blob` is resolved relative to the manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dtype;
use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BLOB_NAME: &str = "weights.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offsets {
    pub w_q: u64,
    pub w_k: u64,
    pub w_v: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer_id: String,
    pub d: usize,
    pub dtype: Dtype,
    pub offsets: Offsets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub blob: String,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone)]
pub struct WeightContainer {
    manifest_path: PathBuf,
    manifest: Manifest,
    blob: Vec<u8>,
}

impl WeightContainer {
    /// Reads and validates a manifest and its blob.
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref().to_path_buf();
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(&manifest_path, format!("manifest is not valid: {e}")))?;
        let blob_path = blob_path(&manifest_path, &manifest.blob);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let container = Self {
            manifest_path,
            manifest,
            blob,
        };
        container.validate()?;
        Ok(container)
    }

    fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::format(&self.manifest_path, reason));
        if self.manifest.format_version != FORMAT_VERSION {
            return fail(format!(
                "format_version {} is unsupported (expected {FORMAT_VERSION})",
                self.manifest.format_version
            ));
        }
        let mut seen = HashSet::new();
        for layer in &self.manifest.layers {
            if !seen.insert(layer.layer_id.as_str()) {
                return fail(format!("layer_ids must be unique: {:?} repeats", layer.layer_id));
            }
            if layer.d == 0 {
                return fail(format!("layer {:?} has d = 0", layer.layer_id));
            }
            let size = matrix_bytes(layer.d, layer.dtype);
            for (name, off) in [("w_q", layer.offsets.w_q), ("w_k", layer.offsets.w_k), ("w_v", layer.offsets.w_v)] {
                let end = size.and_then(|s| s.checked_add(off));
                if end.is_none_or(|end| end > self.blob.len() as u64) {
                    return fail(format!(
                        "offset + d*d*dtype_size exceeds blob length {} for {}.{name}",
                        self.blob.len(),
                        layer.layer_id
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn layer_ids(&self) -> Vec<String> {
        self.manifest.layers.iter().map(|l| l.layer_id.clone()).collect()
    }

    pub fn layer(&self, layer_id: &str) -> Result<&LayerEntry> {
        self.manifest
            .layers
            .iter()
            .find(|l| l.layer_id == layer_id)
            .ok_or_else(|| Error::MissingLayer {
                layer: layer_id.to_owned(),
                available: self.layer_ids(),
            })
    }

    /// Loads one layer's projections, upcasting `f32` data to `f64`.
    pub fn load_layer(&self, layer_id: &str) -> Result<AttentionWeights> {
        let entry = self.layer(layer_id)?;
        let load = |off: u64| -> Result<Matrix> {
            let len = matrix_bytes(entry.d, entry.dtype).expect("validated") as usize;
            let bytes = &self.blob[off as usize..off as usize + len];
            Matrix::new(entry.d, entry.d, entry.dtype.decode(bytes)).map_err(|e| {
                Error::format(&self.manifest_path, format!("layer {layer_id:?}: {e}"))
            })
        };
        AttentionWeights::new(load(entry.offsets.w_q)?, load(entry.offsets.w_k)?, load(entry.offsets.w_v)?)
    }

    /// Hex SHA-256 of the blob.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(&self.blob))
    }
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(blob)
}

fn matrix_bytes(d: usize, dtype: Dtype) -> Option<u64> {
    (d as u64).checked_mul(d as u64)?.checked_mul(dtype.size() as u64)
}

/// One layer to be written by [`write_container`].
#[derive(Debug, Clone)]
pub struct LayerSpec<'a> {
    pub layer_id: &'a str,
    pub weights: &'a AttentionWeights,
    pub dtype: Dtype,
}

/// Writes `manifest_path` and a blob named [`DEFAULT_BLOB_NAME`] next to it.
///
/// Layers are laid out in order, each as `w_q`, `w_k`, `w_v`. `f32` layers are
/// rounded to nearest on write.
pub fn write_container(manifest_path: impl AsRef<Path>, layers: &[LayerSpec<'_>]) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(layers.len());
    let mut seen = HashSet::new();
    for spec in layers {
        if !seen.insert(spec.layer_id) {
            return Err(Error::invalid(format!("duplicate layer_id {:?}", spec.layer_id)));
        }
        let mut push = |m: &Matrix| {
            let off = blob.len() as u64;
            spec.dtype.encode_into(m.as_slice(), &mut blob);
            off
        };
        let offsets = Offsets {
            w_q: push(spec.weights.w_q()),
            w_k: push(spec.weights.w_k()),
            w_v: push(spec.weights.w_v()),
        };
        entries.push(LayerEntry {
            layer_id: spec.layer_id.to_owned(),
            d: spec.weights.d(),
            dtype: spec.dtype,
            offsets,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        blob: DEFAULT_BLOB_NAME.to_owned(),
        layers: entries,
    };
    let blob_path = blob_path(manifest_path, DEFAULT_BLOB_NAME);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))
}
