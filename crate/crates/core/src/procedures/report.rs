use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::critic::ValRecord;
use crate::Result;

/// Record of one procedure run: the configuration it ran with, its seed and
/// a hash of the artifact it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub procedure: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Hex SHA-256 of the serialized artifact.
    pub artifact_hash: String,
    pub selected_iter: Option<usize>,
}

impl RunManifest {
    pub fn new(
        procedure: impl Into<String>,
        config: &impl Serialize,
        seed: u64,
        artifact: &[u8],
        selected_iter: Option<usize>,
    ) -> Result<Self> {
        Ok(RunManifest {
            procedure: procedure.into(),
            config: serde_json::to_value(config)?,
            seed,
            artifact_hash: hash_bytes(artifact),
            selected_iter,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub const METRICS_HEADER: &str = "iter,train_objective,val_mean,val_std,val_mean_minus_std";

/// Per-checkpoint metrics as CSV text. Floats use Rust's shortest
/// round-trip formatting, so equal runs give equal bytes.
pub fn metrics_csv(history: &[ValRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter,
            r.train_objective,
            r.val_mean,
            r.val_std,
            r.score()
        );
    }
    out
}

pub fn write_metrics(path: &Path, history: &[ValRecord]) -> Result<()> {
    fs::write(path, metrics_csv(history))?;
    Ok(())
}
