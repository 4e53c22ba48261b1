//! Volumes, masks and probability maps, their binary file format,
//! intensity preprocessing, cropping, augmentation and synthetic phantoms.

mod augment;
mod crop;
mod phantom;
mod preprocess;
pub mod pvol;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, warp_bilinear, warp_nearest, AugmentParams, AugmentRanges, Warp};
pub use crop::crop;
pub use phantom::{gen_phantom, PhantomSpec};
pub use preprocess::{preprocess, HuWindow, Preprocessed};

/// Volume extent: `m` slices along z, each `h` rows by `w` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(m: usize, h: usize, w: usize) -> Self {
        Self { m, h, w }
    }

    pub const fn len(&self) -> usize {
        self.m * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn slice_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Data(format!("volume dims must be positive, got {self}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.h, self.w)
    }
}

impl std::str::FromStr for Dims {
    type Err = Error;

    /// Parse `MxHxW`, e.g. `32x64x64`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').collect();
        let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
        match parsed.as_deref() {
            Some(&[m, h, w]) if m > 0 && h > 0 && w > 0 => Ok(Dims::new(m, h, w)),
            _ => Err(Error::Config(format!("dims must look like MxHxW with positive sizes, got `{s}`"))),
        }
    }
}

/// Voxel spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub z: f32,
    pub y: f32,
    pub x: f32,
}

impl Spacing {
    pub const fn new(z: f32, y: f32, x: f32) -> Self {
        Self { z, y, x }
    }

    pub fn voxel_mm3(&self) -> f64 {
        self.z as f64 * self.y as f64 * self.x as f64
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

macro_rules! grid_accessors {
    ($ty:ident, $v:ty) => {
        impl $ty {
            pub fn dims(&self) -> Dims {
                self.dims
            }

            pub fn spacing(&self) -> Spacing {
                self.spacing
            }

            pub fn data(&self) -> &[$v] {
                &self.data
            }

            pub fn into_data(self) -> Vec<$v> {
                self.data
            }

            #[inline]
            pub fn get(&self, z: usize, y: usize, x: usize) -> $v {
                self.data[self.dims.index(z, y, x)]
            }

            /// Axial slice `z` as a row-major `h x w` plane.
            pub fn slice(&self, z: usize) -> &[$v] {
                let n = self.dims.slice_len();
                &self.data[z * n..(z + 1) * n]
            }
        }
    };
}

/// Real-valued intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

grid_accessors!(Volume, f32);

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        check_len(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite intensity at voxel {i}")));
        }
        Ok(Self { dims, spacing, data })
    }
}

/// Binary label volume (0 = background, 1 = foreground).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<u8>,
}

grid_accessors!(MaskVolume, u8);

impl MaskVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        check_len(dims, data.len())?;
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!("mask voxel {i} has value {}", data[i])));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        Self {
            dims,
            spacing,
            data: vec![0; dims.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn slice_count(&self, z: usize) -> usize {
        self.slice(z).iter().filter(|&&v| v != 0).count()
    }

    /// Foreground volume in mm^3.
    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.spacing.voxel_mm3()
    }
}

/// Per-voxel foreground probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

grid_accessors!(ProbVolume, f32);

impl ProbVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        check_len(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!("probability {} at voxel {i} outside [0, 1]", data[i])));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.len()])
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f32] {
        let n = self.dims.slice_len();
        &mut self.data[z * n..(z + 1) * n]
    }
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    if dims.len() != len {
        return Err(Error::Shape(format!("{dims} volume needs {} voxels, got {len}", dims.len())));
    }
    Ok(())
}

/// Fail unless two grids share dims.
pub fn same_dims(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("volume dims differ: {a} vs {b}")));
    }
    Ok(())
}
