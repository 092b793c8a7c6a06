//! JSON model format.

use std::fs;
use std::path::Path;

use lava_core::predictor::ZEntry;
use lava_core::{DMatrix, Model, RegressorConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub n_u: usize,
    pub n_y: usize,
    pub n_a: usize,
    pub n_b: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEntry {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    #[serde(rename = "lava-r")]
    LavaR,
    #[serde(rename = "mm-batch")]
    MmBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub solver: Solver,
    /// Coordinate sweeps per sample (recursive solver).
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
    /// MM iterations (batch solver).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    /// Initial RLS gain scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// SHA-256 of the training data file.
    pub data_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub dims: Dims,
    pub ell: Vec<f64>,
    /// `n_y × p`, row-major.
    pub theta: Vec<f64>,
    pub z_sparse: Vec<SparseEntry>,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn from_model(model: &Model, provenance: Provenance) -> Self {
        let cfg = model.config();
        let theta = model.theta();
        let mut flat = Vec::with_capacity(theta.len());
        for i in 0..theta.nrows() {
            flat.extend(theta.row(i).iter());
        }
        ModelFile {
            schema_version: SCHEMA_VERSION,
            dims: Dims {
                n_u: cfg.n_u,
                n_y: cfg.n_y,
                n_a: cfg.n_a,
                n_b: cfg.n_b,
                m: cfg.resolution,
                p: cfg.p(),
                q: cfg.q(),
            },
            ell: cfg.ell.clone(),
            theta: flat,
            z_sparse: model
                .z_entries()
                .iter()
                .map(|e| SparseEntry {
                    i: e.row,
                    j: e.col,
                    value: e.value,
                })
                .collect(),
            provenance,
        }
    }

    /// Validates the file and rebuilds the predictor.
    pub fn to_model(&self) -> Result<Model, CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "unsupported model schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let d = &self.dims;
        let cfg = RegressorConfig::new(d.n_a, d.n_b, d.n_u, d.n_y, d.m, self.ell.clone())
            .map_err(|e| CliError::Schema(format!("model dims: {e}")))?;
        if cfg.p() != d.p || cfg.q() != d.q {
            return Err(CliError::Schema(format!(
                "stored p={}, q={} disagree with derived p={}, q={}",
                d.p,
                d.q,
                cfg.p(),
                cfg.q()
            )));
        }
        if self.theta.len() != d.n_y * d.p {
            return Err(CliError::Schema(format!(
                "theta has {} entries, expected {}",
                self.theta.len(),
                d.n_y * d.p
            )));
        }
        let theta = DMatrix::from_row_slice(d.n_y, d.p, &self.theta);
        let z = self
            .z_sparse
            .iter()
            .map(|e| ZEntry {
                row: e.i,
                col: e.j,
                value: e.value,
            })
            .collect();
        Model::from_sparse(theta, z, cfg).map_err(|e| CliError::Schema(format!("model: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("model file serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
