//! Binary container shared by networks and models:
//!
//! ```text
//! magic    "STNL"           4 bytes
//! version  u16 LE           currently 1
//! kind     u8               what the payload is (net, gaussian, gbrbm, ica, deep_ebm)
//! scalar   u8               byte width of the in-memory scalar that wrote it (4 or 8)
//! act      u8               activation tag, 0 when not applicable
//! nshape   u32 LE
//! shape    nshape × u64 LE
//! nparams  u64 LE
//! params   nparams × f64 LE
//! ```
//!
//! Parameters are always stored as `f64`, so both `f32` and `f64` round-trip exactly.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::{Error, Real, Result};

pub const MAGIC: &[u8; 4] = b"STNL";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Net = 0,
    Gaussian = 1,
    Gbrbm = 2,
    Ica = 3,
    DeepEbm = 4,
}

impl Kind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Kind::Net,
            1 => Kind::Gaussian,
            2 => Kind::Gbrbm,
            3 => Kind::Ica,
            4 => Kind::DeepEbm,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub scalar_width: u8,
    pub activation: u8,
    pub shape: Vec<u64>,
    pub params: Vec<f64>,
}

impl Container {
    pub fn new<T: Real>(kind: Kind, activation: u8, shape: Vec<u64>, params: impl IntoIterator<Item = T>) -> Self {
        Container {
            kind,
            scalar_width: std::mem::size_of::<T>() as u8,
            activation,
            shape,
            params: params.into_iter().map(Real::as_f64).collect(),
        }
    }

    pub fn params_as<T: Real>(&self) -> Vec<T> {
        self.params.iter().map(|&v| T::lit(v)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (self.shape.len() + self.params.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.push(self.scalar_width);
        out.push(self.activation);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for s in &self.shape {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic".into(),
            });
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let kind_at = cur.pos;
        let kind = Kind::from_u8(cur.take(1)?[0]).ok_or(Error::Format {
            offset: kind_at,
            message: "unknown payload kind".into(),
        })?;
        let scalar_width = cur.take(1)?[0];
        let activation = cur.take(1)?[0];
        let nshape = u32::from_le_bytes(cur.array()?) as usize;
        let shape = (0..nshape)
            .map(|_| cur.array().map(u64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let nparams = u64::from_le_bytes(cur.array()?) as usize;
        if bytes.len().saturating_sub(cur.pos) != nparams * 8 {
            return Err(Error::Format {
                offset: cur.pos,
                message: format!("expected {} parameter bytes, found {}", nparams * 8, bytes.len() - cur.pos),
            });
        }
        let params = (0..nparams)
            .map(|_| cur.array().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        Ok(Container {
            kind,
            scalar_width,
            activation,
            shape,
            params,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Hex SHA-256 of the serialized bytes; identifies a model in manifests.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn expect_kind(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format {
                offset: 6,
                message: format!("expected {kind:?} payload, found {:?}", self.kind),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_params(&self, n: usize) -> Result<()> {
        if self.params.len() != n {
            return Err(Error::Format {
                offset: 0,
                message: format!("expected {n} parameters, found {}", self.params.len()),
            });
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: "truncated".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_reports_offset() {
        let c = Container::new::<f64>(Kind::Ica, 0, vec![2], vec![1.0, 2.0, 3.0, 4.0]);
        let bytes = c.to_bytes();
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
        match Container::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Container::from_bytes(b"NOPE"), Err(Error::Format { offset: 0, .. })));
    }
}
