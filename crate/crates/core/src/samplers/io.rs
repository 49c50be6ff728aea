//! Flat binary sample matrices with a JSON sidecar.
//!
//! ```text
//! magic   "STNM"     4 bytes
//! version u16 LE
//! rows    u64 LE
//! cols    u64 LE
//! data    rows × cols f64 LE, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"STNM";
const MATRIX_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 8;

/// Provenance written next to every sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    /// Hash of the serialized model that produced the samples, when there is one.
    pub model_hash: Option<String>,
    pub sampler: serde_json::Value,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn matrix_to_bytes<T: Real>(m: &Array2<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

pub fn matrix_from_bytes<T: Real>(bytes: &[u8]) -> Result<Array2<T>> {
    let fail = |offset: usize, message: &str| Error::Format {
        offset,
        message: message.into(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MATRIX_MAGIC {
        return Err(fail(0, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MATRIX_VERSION {
        return Err(fail(4, "unsupported version"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    let (rows, cols) = (word(6), word(14));
    let cells = rows.checked_mul(cols).ok_or_else(|| fail(6, "shape overflows"))?;
    let expected = cells.checked_mul(8).and_then(|b| b.checked_add(HEADER_LEN)).ok_or_else(|| fail(6, "shape overflows"))?;
    if bytes.len() != expected {
        return Err(fail(bytes.len().min(expected), "data length does not match shape"));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("sized"))
}

/// Writes the matrix to `path` and the manifest to `path.json`.
pub fn write_matrix<T: Real>(path: &Path, m: &Array2<T>, manifest: &SampleManifest) -> Result<()> {
    if manifest.rows != m.nrows() || manifest.cols != m.ncols() {
        return Err(Error::shape(
            "sample manifest",
            format!("{:?}", m.dim()),
            format!("({}, {})", manifest.rows, manifest.cols),
        ));
    }
    fs::write(path, matrix_to_bytes(m))?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

pub fn read_matrix<T: Real>(path: &Path) -> Result<Array2<T>> {
    matrix_from_bytes(&fs::read(path)?)
}

pub fn read_sidecar(path: &Path) -> Result<SampleManifest> {
    Ok(serde_json::from_slice(&fs::read(sidecar_path(path))?)?)
}
