//! Dataset handling: splits, image preprocessing, IDX files and toy densities.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use steinlearn::procedures::SplitData;
use steinlearn::rng::{normal, rng_from_seed};

use crate::{HarnessError, Result, DATA_DIR_ENV};

/// Seeded train / validation / test split; see [`SplitData::from_samples`].
pub fn split(x: ArrayView2<f64>, ratios: [f64; 3], seed: u64) -> Result<SplitData<f64>> {
    Ok(SplitData::from_samples(x, ratios, seed)?)
}

/// Resolves a relative path against `$STEINLAB_DATA_DIR` when it is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

pub const LOGIT_ALPHA: f64 = 1e-6;

/// `(v + u)/256`, clamped to `[α, 1 − α]`, then `log x − log(1 − x)`.
pub fn dequantize_pixel(v: u8, u: f64) -> f64 {
    let x = ((v as f64 + u) / 256.0).clamp(LOGIT_ALPHA, 1.0 - LOGIT_ALPHA);
    x.ln() - (-x).ln_1p()
}

/// Inverse of the logit map, for turning samples back into intensities in (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Uniformly dequantizes integer pixels and maps them to logit space.
pub fn logit_dequantize(pixels: ArrayView2<i64>, seed: u64) -> Result<Array2<f64>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Array2::zeros(pixels.dim());
    for (i, (o, &v)) in out.iter_mut().zip(pixels.iter()).enumerate() {
        let byte = u8::try_from(v).map_err(|_| HarnessError::PixelRange { value: v, index: i })?;
        *o = dequantize_pixel(byte, rng.random::<f64>());
    }
    Ok(out)
}

/// Unsigned-byte IDX array (the MNIST and FashionMNIST file format).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One row per item, flattening the trailing dimensions.
    pub fn to_rows(&self, limit: usize) -> Array2<i64> {
        let n = self.len().min(limit);
        let width: usize = self.dims.iter().skip(1).product();
        Array2::from_shape_fn((n, width), |(i, j)| self.data[i * width + j] as i64)
    }
}

const IDX_UBYTE: u8 = 0x08;

fn format_err(offset: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        offset,
        message: message.into(),
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file shorter than the 4-byte magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, "magic number must start with two zero bytes"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(format_err(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(format_err(3, "rank must be at least 1"));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(format_err(bytes.len(), format!("truncated header, need {header} bytes")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|k| {
            let o = 4 + 4 * k;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(4, "dimension product overflows"))?;
    let end = header
        .checked_add(count)
        .ok_or_else(|| format_err(4, "dimension product overflows"))?;
    if bytes.len() < end {
        return Err(format_err(bytes.len(), format!("truncated payload, expected {end} bytes")));
    }
    if bytes.len() > end {
        return Err(format_err(end, "trailing bytes after payload"));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..end].to_vec(),
    })
}

pub fn idx_to_bytes(a: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, a.dims.len() as u8];
    for &d in &a.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&a.data);
    out
}

pub fn load_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_idx(&bytes)
}

pub fn write_idx(path: &Path, a: &IdxArray) -> Result<()> {
    fs::write(path, idx_to_bytes(a)).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Images plus optional labels, checked to have matching counts.
pub fn load_images(images: &Path, labels: Option<&Path>) -> Result<(IdxArray, Option<IdxArray>)> {
    let img = load_idx(images)?;
    let lab = labels.map(load_idx).transpose()?;
    if let Some(l) = &lab {
        if l.len() != img.len() {
            return Err(HarnessError::Config(format!(
                "{} images but {} labels",
                img.len(),
                l.len()
            )));
        }
    }
    Ok((img, lab))
}

/// Two-dimensional toy densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toy2d {
    TwoMoons,
    Rings,
    Checkerboard,
    Spirals,
}

/// Ring radii; each point's radius lies within `±RING_HALF_WIDTH` of one of them.
pub const RING_RADII: [f64; 3] = [1.0, 2.0, 3.0];
pub const RING_HALF_WIDTH: f64 = 0.15;
pub const MOONS_NOISE: f64 = 0.1;

impl Toy2d {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two_moons" | "moons" => Ok(Toy2d::TwoMoons),
            "rings" => Ok(Toy2d::Rings),
            "checkerboard" => Ok(Toy2d::Checkerboard),
            "spirals" | "2spirals" => Ok(Toy2d::Spirals),
            _ => Err(HarnessError::UnknownDataset(name.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Toy2d::TwoMoons => "two_moons",
            Toy2d::Rings => "rings",
            Toy2d::Checkerboard => "checkerboard",
            Toy2d::Spirals => "spirals",
        }
    }

    pub fn sample(self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        let mut out = Array2::zeros((n, 2));
        for mut row in out.rows_mut() {
            let (a, b) = match self {
                Toy2d::TwoMoons => {
                    // Centred so the mixture mean is near the origin.
                    let t = PI * rng.random::<f64>();
                    let (x, y) = if rng.random::<bool>() {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    (
                        x - 0.5 + MOONS_NOISE * normal::<f64, _>(&mut rng),
                        y - 0.25 + MOONS_NOISE * normal::<f64, _>(&mut rng),
                    )
                }
                Toy2d::Rings => {
                    let r = RING_RADII[rng.random_range(0..RING_RADII.len())]
                        + rng.random_range(-RING_HALF_WIDTH..RING_HALF_WIDTH);
                    let t = 2.0 * PI * rng.random::<f64>();
                    (r * t.cos(), r * t.sin())
                }
                Toy2d::Checkerboard => {
                    let x = rng.random_range(-2.0..2.0f64);
                    let y = rng.random::<f64>() - 2.0 * rng.random_range(0..2) as f64 + (x.floor().rem_euclid(2.0));
                    (x, y)
                }
                Toy2d::Spirals => {
                    let t = rng.random::<f64>().sqrt() * 3.0 * PI;
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let jx = 0.5 * rng.random::<f64>();
                    let jy = 0.5 * rng.random::<f64>();
                    (sign * (-t.cos() * t + jx) / 3.0, sign * (t.sin() * t + jy) / 3.0)
                }
            };
            row[0] = a;
            row[1] = b;
        }
        out
    }
}

pub fn toy2d_data(name: &str, n: usize, seed: u64) -> Result<Array2<f64>> {
    Ok(Toy2d::parse(name)?.sample(n, seed))
}

/// Synthetic 28×28 digit-like images (a blurred stroke per image) for runs
/// without a real image file.
pub fn synthetic_images(n: usize, seed: u64) -> IdxArray {
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * 784);
    for _ in 0..n {
        let (cx, cy) = (rng.random_range(9.0..19.0f64), rng.random_range(9.0..19.0f64));
        let angle = rng.random_range(0.0..PI);
        let (len, width) = (rng.random_range(4.0..9.0f64), rng.random_range(1.0..2.5f64));
        let (ux, uy) = (angle.cos(), angle.sin());
        for r in 0..28 {
            for c in 0..28 {
                let (dx, dy) = (c as f64 - cx, r as f64 - cy);
                let along = (dx * ux + dy * uy).clamp(-len, len);
                let (px, py) = (dx - along * ux, dy - along * uy);
                let v = 255.0 * (-(px * px + py * py) / (2.0 * width * width)).exp();
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    IdxArray {
        dims: vec![n, 28, 28],
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    #[test]
    fn split_sizes() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64);
        let s = split(x.view(), [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!((s.train.nrows(), s.val.nrows(), s.test.nrows()), (8, 1, 1));
        assert_eq!(s, split(x.view(), [0.8, 0.1, 0.1], 5).unwrap());
        let big = Array2::<f64>::zeros((10_000, 1));
        let s = split(big.view(), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.nrows(), s.val.nrows(), s.test.nrows()), (8000, 1000, 1000));
        assert!(split(x.view(), [0.5, 0.5, 0.0], 1).is_err());
    }

    #[test]
    fn logit_examples() {
        let z = dequantize_pixel(0, 0.5);
        let p: f64 = 0.5 / 256.0;
        assert!((z - (p / (1.0 - p)).ln()).abs() < 1e-12);
        assert!((z + 6.2364).abs() < 1e-3, "{z}");
        let top = dequantize_pixel(255, 0.999_999_9);
        assert!(top.is_finite() && (top - 13.8).abs() < 0.1, "{top}");
        assert!((dequantize_pixel(255, 0.5) - 6.2364).abs() < 1e-3);
        for v in [1u8, 17, 128, 254] {
            for u in [0.1, 0.5, 0.9] {
                let back = sigmoid(dequantize_pixel(v, u));
                assert!((back - (v as f64 + u) / 256.0).abs() < 1e-12);
            }
        }
        let px = array![[0i64, 255], [128, 3]];
        let a = logit_dequantize(px.view(), 1).unwrap();
        assert_eq!(a, logit_dequantize(px.view(), 1).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(matches!(
            logit_dequantize(array![[0i64, 256]].view(), 1),
            Err(HarnessError::PixelRange { value: 256, index: 1 })
        ));
        assert!(logit_dequantize(array![[-1i64]].view(), 1).is_err());
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let a = IdxArray {
            dims: vec![2, 28, 28],
            data: (0..2 * 784).map(|i| (i % 256) as u8).collect(),
        };
        let bytes = idx_to_bytes(&a);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &2u32.to_be_bytes());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture-idx3-ubyte");
        write_idx(&path, &a).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        assert_eq!(load_idx(&path).unwrap(), a);
        assert_eq!(a.to_rows(10).dim(), (2, 784));

        match parse_idx(&bytes[..bytes.len() - 5]) {
            Err(HarnessError::Format { offset, .. }) => assert_eq!(offset, bytes.len() - 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx(&[0, 1, 8, 1]), Err(HarnessError::Format { offset: 0, .. })));
        assert!(matches!(parse_idx(&[0, 0, 9, 1]), Err(HarnessError::Format { offset: 2, .. })));
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0, 0]), Err(HarnessError::Format { offset: 6, .. })));
    }

    #[test]
    fn toy_sets() {
        assert_eq!(toy2d_data("rings", 0, 1).unwrap().dim(), (0, 2));
        assert!(matches!(toy2d_data("swiss", 5, 1), Err(HarnessError::UnknownDataset(_))));
        let rings = toy2d_data("rings", 2000, 3).unwrap();
        for r in rings.rows() {
            let rad = r[0].hypot(r[1]);
            assert!(RING_RADII.iter().any(|c| (rad - c).abs() <= RING_HALF_WIDTH), "{rad}");
        }
        let board = toy2d_data("checkerboard", 2000, 3).unwrap();
        for r in board.rows() {
            assert!(r[0].abs() <= 2.0 && r[1].abs() <= 2.0);
            // Occupied cells: floor(x) + floor(y) even.
            assert_eq!((r[0].floor() + r[1].floor()).rem_euclid(2.0), 0.0, "{r}");
        }
        let spirals = toy2d_data("spirals", 500, 3).unwrap();
        assert!(spirals.iter().all(|v| v.is_finite() && v.abs() < 4.0));
        assert_eq!(toy2d_data("two_moons", 50, 9).unwrap(), toy2d_data("two_moons", 50, 9).unwrap());
    }

    #[test]
    fn two_moons_moments_match_large_sample() {
        let stats = |x: &Array2<f64>| {
            let m = x.mean_axis(Axis(0)).unwrap();
            let c = x - &m;
            let cov = c.t().dot(&c) / (x.nrows() - 1) as f64;
            (m, cov)
        };
        let (m_ref, c_ref) = stats(&toy2d_data("two_moons", 400_000, 100).unwrap());
        let (m, c) = stats(&toy2d_data("two_moons", 20_000, 7).unwrap());
        let scale = c_ref.diag().mapv(f64::sqrt);
        for k in 0..2 {
            assert!((m[k] - m_ref[k]).abs() < 0.05 * scale[k], "mean {m} vs {m_ref}");
        }
        for (a, b) in c.iter().zip(c_ref.iter()) {
            assert!((a - b).abs() < 0.05 * scale[0] * scale[1], "cov {c} vs {c_ref}");
        }
    }

    #[test]
    fn synthetic_images_are_valid_idx() {
        let a = synthetic_images(3, 1);
        assert_eq!(a.dims, vec![3, 28, 28]);
        assert_eq!(parse_idx(&idx_to_bytes(&a)).unwrap(), a);
        assert!(a.data.iter().any(|&v| v > 200));
    }
}
