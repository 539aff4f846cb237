use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::directions::{CombinedVariant, EditDirection};
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Unit-norm tolerance applied when a directions file is read back.
pub const READ_UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub rank: usize,
    pub eigenvalue: f64,
    pub vector: Vec<f64>,
    pub degenerate_cluster: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Hex SHA-256 of the weight blob the directions came from.
    pub container_checksum: String,
    pub tool_version: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionsFile {
    pub layer_id: String,
    pub variant: CombinedVariant,
    pub d: usize,
    pub directions: Vec<DirectionRecord>,
    pub provenance: Provenance,
}

impl DirectionsFile {
    pub fn from_directions(directions: &[EditDirection], provenance: Provenance) -> Result<Self> {
        let first = directions
            .first()
            .ok_or_else(|| Error::invalid("no directions to write"))?;
        Ok(Self {
            layer_id: first.layer_id.clone(),
            variant: first.variant,
            d: first.d(),
            directions: directions
                .iter()
                .map(|d| DirectionRecord {
                    rank: d.rank,
                    eigenvalue: d.eigenvalue,
                    vector: d.vector.clone(),
                    degenerate_cluster: d.degenerate_cluster,
                })
                .collect(),
            provenance,
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("directions serialize");
        text.push('\n');
        text
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DirectionsFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, format!("directions file is not valid: {e}")))?;
        file.validate().map_err(|reason| Error::format(path, reason))?;
        Ok(file)
    }

    fn validate(&self) -> Result<(), String> {
        if self.d == 0 || self.directions.is_empty() {
            return Err("directions file needs d > 0 and at least one direction".into());
        }
        for (i, rec) in self.directions.iter().enumerate() {
            if rec.rank != i {
                return Err(format!("direction {i} has rank {} (ranks must be 0, 1, 2, ...)", rec.rank));
            }
            if rec.vector.len() != self.d {
                return Err(format!("direction {i} has length {} but d = {}", rec.vector.len(), self.d));
            }
            let norm = dot(&rec.vector, &rec.vector).sqrt();
            if (norm - 1.0).abs() > READ_UNIT_TOLERANCE {
                return Err(format!("direction {i} is not unit norm (|v| = {norm})"));
            }
            if i > 0 && rec.eigenvalue > self.directions[i - 1].eigenvalue {
                return Err(format!("eigenvalues must be nonincreasing (rank {i})"));
            }
        }
        Ok(())
    }

    pub fn direction(&self, rank: usize) -> Result<EditDirection> {
        let rec = self.directions.get(rank).ok_or_else(|| {
            Error::invalid(format!(
                "rank {rank} not present; file holds ranks 0..{}",
                self.directions.len()
            ))
        })?;
        Ok(EditDirection {
            layer_id: self.layer_id.clone(),
            rank: rec.rank,
            eigenvalue: rec.eigenvalue,
            vector: rec.vector.clone(),
            variant: self.variant,
            degenerate_cluster: rec.degenerate_cluster,
        })
    }
}
