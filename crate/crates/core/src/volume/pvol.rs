//! `PVOL` volume files.
//!
//! ```text
//! "PVOL"          4 bytes
//! version   u32   = 1
//! dtype     u8    1 = f32 intensities/probabilities, 2 = u8 binary mask
//! m, h, w   u32 x 3
//! sz, sy, sx f32 x 3 (mm)
//! payload   slice-major (z outer, then rows, then columns)
//! ```
//!
//! All multi-byte fields are little-endian.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::nn::checkpoint::Reader;
use crate::volume::{Dims, MaskVolume, ProbVolume, Spacing, Volume};

pub const MAGIC: &[u8; 4] = b"PVOL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    Mask = 2,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::Mask => "u8 mask",
        }
    }
}

/// Decoded file contents.
#[derive(Debug, Clone, PartialEq)]
pub enum Pvol {
    F32 { dims: Dims, spacing: Spacing, data: Vec<f32> },
    Mask(MaskVolume),
}

fn header(dtype: Dtype, dims: Dims, spacing: Spacing, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    for d in [dims.m, dims.h, dims.w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in [spacing.z, spacing.y, spacing.x] {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn write_f32(dims: Dims, spacing: Spacing, data: &[f32]) -> Vec<u8> {
    let mut out = header(Dtype::F32, dims, spacing, 4 * data.len());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_volume(v: &Volume) -> Vec<u8> {
    write_f32(v.dims(), v.spacing(), v.data())
}

pub fn write_prob(p: &ProbVolume) -> Vec<u8> {
    write_f32(p.dims(), p.spacing(), p.data())
}

pub fn write_mask(m: &MaskVolume) -> Vec<u8> {
    let mut out = header(Dtype::Mask, m.dims(), m.spacing(), m.data().len());
    out.extend_from_slice(m.data());
    out
}

pub fn read_pvol(bytes: &[u8]) -> Result<Pvol> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(FormatError::UnrecognizedFormat {
            expected: "PVOL".into(),
            found: magic.to_vec(),
        }
        .into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let dtype = match r.u8()? {
        1 => Dtype::F32,
        2 => Dtype::Mask,
        other => return Err(FormatError::UnknownDtype(other).into()),
    };
    let dims = Dims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let spacing = Spacing::new(r.f32()?, r.f32()?, r.f32()?);
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::Mask => 1,
    };
    let needed = dims
        .m
        .checked_mul(dims.h)
        .and_then(|v| v.checked_mul(dims.w))
        .and_then(|v| v.checked_mul(width))
        .ok_or(FormatError::Truncated {
            needed: usize::MAX,
            available: r.remaining(),
        })?;
    let payload = r.take(needed)?;
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()).into());
    }
    match dtype {
        Dtype::F32 => Ok(Pvol::F32 {
            dims,
            spacing,
            data: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        }),
        Dtype::Mask => {
            if let Some(i) = payload.iter().position(|&v| v > 1) {
                return Err(FormatError::InvalidMask {
                    index: i,
                    value: payload[i],
                }
                .into());
            }
            Ok(Pvol::Mask(MaskVolume::new(dims, spacing, payload.to_vec())?))
        }
    }
}

fn mismatch(expected: Dtype, found: Dtype) -> Error {
    FormatError::DtypeMismatch {
        expected: expected.name(),
        found: found.name(),
    }
    .into()
}

pub fn read_volume(bytes: &[u8]) -> Result<Volume> {
    match read_pvol(bytes)? {
        Pvol::F32 { dims, spacing, data } => Volume::new(dims, spacing, data),
        Pvol::Mask(_) => Err(mismatch(Dtype::F32, Dtype::Mask)),
    }
}

pub fn read_prob(bytes: &[u8]) -> Result<ProbVolume> {
    match read_pvol(bytes)? {
        Pvol::F32 { dims, spacing, data } => ProbVolume::new(dims, spacing, data),
        Pvol::Mask(_) => Err(mismatch(Dtype::F32, Dtype::Mask)),
    }
}

pub fn read_mask(bytes: &[u8]) -> Result<MaskVolume> {
    match read_pvol(bytes)? {
        Pvol::Mask(m) => Ok(m),
        Pvol::F32 { .. } => Err(mismatch(Dtype::Mask, Dtype::F32)),
    }
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    read_volume(&std::fs::read(path)?)
}

pub fn load_mask(path: &Path) -> Result<MaskVolume> {
    read_mask(&std::fs::read(path)?)
}

pub fn load_prob(path: &Path) -> Result<ProbVolume> {
    read_prob(&std::fs::read(path)?)
}
