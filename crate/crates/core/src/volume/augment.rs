//! In-plane affine augmentation about the slice centre.
//!
//! The forward map is `p' = c + F R S (p - c)` with shear `S`, rotation `R`
//! and flips `F`. Output pixels pull from the source through the inverse map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    pub max_shear: f64,
    pub flip_prob: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            max_rotation_deg: 25.0,
            max_shear: 0.2,
            flip_prob: 0.5,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_rotation_deg >= 0.0
            && self.max_shear >= 0.0
            && (0.0..=1.0).contains(&self.flip_prob)
            && self.max_rotation_deg.is_finite()
            && self.max_shear.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid augmentation ranges {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub shear: f64,
    /// Mirror columns.
    pub flip_x: bool,
    /// Mirror rows.
    pub flip_y: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            shear: 0.0,
            flip_x: false,
            flip_y: false,
        }
    }

    pub fn sample(seed: u64, ranges: &AugmentRanges) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rotation_deg = rng.random::<f64>() * ranges.max_rotation_deg;
        let shear = rng.random::<f64>() * ranges.max_shear;
        let flip_x = rng.random::<f64>() < ranges.flip_prob;
        let flip_y = rng.random::<f64>() < ranges.flip_prob;
        Self {
            rotation_deg,
            shear,
            flip_x,
            flip_y,
        }
    }
}

/// Inverse sampling map for one slice geometry.
#[derive(Debug, Clone, Copy)]
pub struct Warp {
    h: usize,
    w: usize,
    cy: f64,
    cx: f64,
    /// Row-major 2x2 inverse acting on `(x, y)`.
    inv: [f64; 4],
}

impl Warp {
    pub fn new(params: &AugmentParams, h: usize, w: usize) -> Self {
        let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
        let s = params.shear;
        let fx = if params.flip_x { -1.0 } else { 1.0 };
        let fy = if params.flip_y { -1.0 } else { 1.0 };
        // S^-1 R^T F
        let rt = [cos, sin, -sin, cos];
        let rtf = [rt[0] * fx, rt[1] * fy, rt[2] * fx, rt[3] * fy];
        let inv = [rtf[0] - s * rtf[2], rtf[1] - s * rtf[3], rtf[2], rtf[3]];
        Self {
            h,
            w,
            cy: (h as f64 - 1.0) / 2.0,
            cx: (w as f64 - 1.0) / 2.0,
            inv,
        }
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Source coordinate `(y, x)` for output pixel `(y, x)`.
    #[inline]
    pub fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        let sx = self.inv[0] * dx + self.inv[1] * dy;
        let sy = self.inv[2] * dx + self.inv[3] * dy;
        (self.cy + sy, self.cx + sx)
    }
}

/// Bilinear resampling; coordinates outside the plane clamp to the edge.
pub fn warp_bilinear(plane: &[f32], warp: &Warp) -> Vec<f32> {
    assert_eq!(plane.len(), warp.len(), "plane does not match warp geometry");
    let (h, w) = (warp.h, warp.w);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = warp.source(y, x);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
            let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
            let bot = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Nearest-neighbour resampling; coordinates outside the plane read 0.
pub fn warp_nearest(plane: &[u8], warp: &Warp) -> Vec<u8> {
    assert_eq!(plane.len(), warp.len(), "plane does not match warp geometry");
    let (h, w) = (warp.h, warp.w);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = warp.source(y, x);
            let (ry, rx) = (sy.round(), sx.round());
            let v = if ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w {
                plane[ry as usize * w + rx as usize]
            } else {
                0
            };
            out.push(v);
        }
    }
    out
}

/// Apply one random transform, drawn from `seed`, to an image slice and its mask.
pub fn augment(
    slice: &[f32],
    mask: &[u8],
    h: usize,
    w: usize,
    seed: u64,
    ranges: &AugmentRanges,
) -> Result<(Vec<f32>, Vec<u8>)> {
    ranges.validate()?;
    if slice.len() != h * w || mask.len() != h * w {
        return Err(Error::Shape(format!(
            "augment expects {h}x{w} planes, got {} image and {} mask values",
            slice.len(),
            mask.len()
        )));
    }
    let warp = Warp::new(&AugmentParams::sample(seed, ranges), h, w);
    Ok((warp_bilinear(slice, &warp), warp_nearest(mask, &warp)))
}
