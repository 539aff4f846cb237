//! On-disk formats. All binary data is little-endian regardless of host.

mod container;
mod directions_file;
mod latent_file;

use serde::{Deserialize, Serialize};

pub use container::{
    write_container, LayerEntry, LayerSpec, Manifest, Offsets, WeightContainer, DEFAULT_BLOB_NAME, FORMAT_VERSION,
};
pub use directions_file::{DirectionRecord, DirectionsFile, Provenance};
pub use latent_file::{LatentFile, LatentHeader, LATENT_MAGIC, LATENT_VERSION};

/// Stored element type. Values are always held as `f64` in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub(crate) fn from_size(size: u32) -> Option<Self> {
        match size {
            4 => Some(Dtype::F32),
            8 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub(crate) fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                .collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        }
    }

    pub(crate) fn encode_into(self, values: &[f64], out: &mut Vec<u8>) {
        out.reserve(values.len() * self.size());
        match self {
            Dtype::F32 => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64 => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
}
