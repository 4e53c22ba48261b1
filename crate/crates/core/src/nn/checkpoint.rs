//! `PBRW` checkpoint container.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! "PBRW"            4 bytes
//! version     u32   = 1
//! in_channels u32
//! base_width  u32
//! count       u32
//! count x { name_len u16, name utf-8, rank u8, dims u32 x rank, values f32 x prod(dims) }
//! ```

use crate::error::{FormatError, Result};

pub const MAGIC: &[u8; 4] = b"PBRW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub in_channels: u32,
    pub base_width: u32,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .arrays
            .iter()
            .map(|a| 3 + a.name.len() + 4 * a.dims.len() + 4 * a.values.len())
            .sum();
        let mut out = Vec::with_capacity(20 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.in_channels.to_le_bytes());
        out.extend_from_slice(&self.base_width.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.dims.len() as u8);
            for d in &a.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &a.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(FormatError::UnrecognizedFormat {
                expected: "PBRW".into(),
                found: magic.to_vec(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let in_channels = r.u32()?;
        let base_width = r.u32()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| FormatError::InvalidName)?
                .to_owned();
            if arrays.iter().any(|a: &NamedArray| a.name == name) {
                return Err(FormatError::DimMismatch {
                    name,
                    detail: "duplicate array name".into(),
                });
            }
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| FormatError::DimMismatch {
                    name: name.clone(),
                    detail: "element count overflows".into(),
                })?;
            let raw = r.take(n.checked_mul(4).ok_or(FormatError::Truncated {
                needed: usize::MAX,
                available: r.remaining(),
            })?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push(NamedArray { name, dims, values });
        }
        if r.remaining() != 0 {
            return Err(FormatError::TrailingBytes(r.remaining()));
        }
        Ok(Self {
            in_channels,
            base_width,
            arrays,
        })
    }
}

/// Bounds-checked little-endian cursor shared by the binary decoders.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            in_channels: 3,
            base_width: 8,
            arrays: vec![
                NamedArray {
                    name: "a.weight".into(),
                    dims: vec![2, 1, 1, 2],
                    values: vec![1.0, -2.5, f32::MIN_POSITIVE, 3.0e7],
                },
                NamedArray {
                    name: "a.bias".into(),
                    dims: vec![2],
                    values: vec![0.0, -0.0],
                },
            ],
        }
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"PBRW");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(&b[12..16], &8u32.to_le_bytes());
        assert_eq!(&b[16..20], &2u32.to_le_bytes());
        assert_eq!(&b[20..22], &8u16.to_le_bytes());
        assert_eq!(&b[22..30], b"a.weight");
        assert_eq!(b[30], 4);
        // 20 header + (2+8+1+16+16) + (2+6+1+4+8)
        assert_eq!(b.len(), 20 + 43 + 21);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert!(back.arrays[1].values[1].is_sign_negative());
    }

    #[test]
    fn truncation_is_reported_not_panicking() {
        let b = sample().to_bytes();
        for cut in [0, 3, 10, 21, 40, b.len() - 1] {
            let err = Checkpoint::from_bytes(&b[..cut]).unwrap_err();
            assert!(matches!(err, FormatError::Truncated { .. }), "{cut}: {err:?}");
        }
    }

    #[test]
    fn bad_magic_is_unrecognized() {
        let mut b = sample().to_bytes();
        b[0] = b'X';
        let err = Checkpoint::from_bytes(&b).unwrap_err();
        assert!(err.to_string().starts_with("unrecognized format"));
    }

    #[test]
    fn version_and_trailing_bytes() {
        let mut b = sample().to_bytes();
        b[4] = 2;
        assert_eq!(Checkpoint::from_bytes(&b).unwrap_err(), FormatError::UnsupportedVersion(2));
        let mut b = sample().to_bytes();
        b.push(0);
        assert_eq!(Checkpoint::from_bytes(&b).unwrap_err(), FormatError::TrailingBytes(1));
    }
}
