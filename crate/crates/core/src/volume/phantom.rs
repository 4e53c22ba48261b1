//! Synthetic abdominal phantoms: a tapered, wandering tube inside a noisy
//! soft-tissue body, with bright distractor blobs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, MaskVolume, Spacing, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: Dims,
    pub spacing: Spacing,
    /// Fraction of slices left empty at each end of the volume.
    pub z_margin: f64,
    /// Cross-section radius at the tube ends and at its widest point (pixels).
    pub radius_min: f64,
    pub radius_max: f64,
    /// Largest in-plane centreline displacement between adjacent slices (pixels).
    pub max_step: f64,
    /// Tube intensity above the local tissue (HU).
    pub contrast: f64,
    pub noise_std: f64,
    pub distractors: usize,
}

impl PhantomSpec {
    pub fn new(seed: u64, dims: Dims) -> Self {
        Self {
            seed,
            dims,
            spacing: Spacing::new(2.0, 1.0, 1.0),
            z_margin: 0.1,
            radius_min: 1.5,
            radius_max: 12.0,
            max_step: 0.6,
            contrast: 70.0,
            noise_std: 50.0,
            distractors: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        let fin = [
            self.z_margin,
            self.radius_min,
            self.radius_max,
            self.max_step,
            self.contrast,
            self.noise_std,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !fin || !(0.0..0.5).contains(&self.z_margin) || self.noise_std < 0.0 || self.max_step < 0.0 {
            return Err(Error::Config(format!("invalid phantom parameters {self:?}")));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(Error::Config(format!(
                "phantom radii must satisfy 0 < min <= max, got {} and {}",
                self.radius_min, self.radius_max
            )));
        }
        let (z0, z1) = self.tube_range();
        let need = 2.0 * (self.radius_max + self.wander() + 6.0);
        if z1 < z0 + 2 || (d.h.min(d.w) as f64) < need {
            return Err(Error::Config(format!(
                "phantom dims {d} too small for tube radius {} (need slices >= {need:.0} px and >= 3 tube slices)",
                self.radius_max
            )));
        }
        Ok(())
    }

    /// Inclusive range of slices containing the tube.
    fn tube_range(&self) -> (usize, usize) {
        let m = self.dims.m;
        let z0 = (m as f64 * self.z_margin).round() as usize;
        (z0, m.saturating_sub(z0 + 1))
    }

    /// Centreline amplitude chosen so adjacent-slice steps stay below `max_step`.
    fn wander(&self) -> f64 {
        (self.max_step * self.dims.m as f64 / (2.0 * PI)).min(self.dims.h.min(self.dims.w) as f64 / 8.0)
    }
}

struct Slab {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Slab {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// Generate an intensity volume in HU and its binary tube mask.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<(Volume, MaskVolume)> {
    spec.validate()?;
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (d.h as f64, d.w as f64);
    let (cy0, cx0) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);

    // Body outline and slow tissue texture.
    let body = (0.46 * h, 0.47 * w);
    let tissue = 40.0;
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(8.0..18.0),
                rng.random_range(0.04..0.12),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..PI),
            ]
        })
        .collect();

    // Tube centreline: one smooth cycle per axis, amplitude bounded by max_step.
    let amp = spec.wander();
    let (py, px) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let (oy, ox) = (rng.random_range(-0.1..0.1) * h, rng.random_range(-0.1..0.1) * w);
    let aspect = rng.random_range(0.7..0.9);
    let a0 = rng.random_range(0.0..PI);
    let (z0, z1) = spec.tube_range();
    let len = (z1 - z0 + 1) as f64;
    let tube: Vec<Option<Slab>> = (0..d.m)
        .map(|z| {
            if z < z0 || z > z1 {
                return None;
            }
            let t = 2.0 * PI * z as f64 / d.m as f64;
            let u = (z - z0) as f64 + 0.5;
            let r = spec.radius_min + (spec.radius_max - spec.radius_min) * (PI * u / len).sin();
            Some(Slab {
                cy: cy0 + oy + amp * (t + py).sin() * 0.7,
                cx: cx0 + ox + amp * (t + px).sin(),
                ry: r * aspect,
                rx: r,
                angle: a0 + 0.3 * (t + px).cos(),
            })
        })
        .collect();

    // Distractors: ellipsoids kept clear of the tube.
    let mut blobs: Vec<(f64, f64, f64, f64, f64, f64)> = Vec::new();
    let mut tries = 0;
    while blobs.len() < spec.distractors && tries < 200 * (spec.distractors + 1) {
        tries += 1;
        let r = rng.random_range(2.5..5.5);
        let rz = rng.random_range(1.0..3.5);
        let bz = rng.random_range(0.0..d.m as f64);
        let by = cy0 + rng.random_range(-0.6..0.6) * body.0;
        let bx = cx0 + rng.random_range(-0.6..0.6) * body.1;
        let gain = rng.random_range(0.7..1.0);
        let clear = tube.iter().flatten().all(|s| {
            let gap = ((s.cy - by).powi(2) + (s.cx - bx).powi(2)).sqrt();
            gap > s.rx + r + 3.0
        });
        if clear {
            blobs.push((bz, by, bx, rz, r, gain));
        }
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut img = Vec::with_capacity(d.len());
    let mut mask = Vec::with_capacity(d.len());
    for z in 0..d.m {
        for y in 0..d.h {
            for x in 0..d.w {
                let (yf, xf) = (y as f64, x as f64);
                let inside = ((yf - cy0) / body.0).powi(2) + ((xf - cx0) / body.1).powi(2) <= 1.0;
                let fg = tube[z].as_ref().is_some_and(|s| s.contains(yf, xf));
                let mut v = if inside {
                    let tex: f64 = waves
                        .iter()
                        .map(|[a, f, p, th]| a * (f * (xf * th.cos() + yf * th.sin()) + p).sin())
                        .sum();
                    tissue + tex
                } else {
                    -1000.0
                };
                if fg {
                    v += spec.contrast;
                } else if inside {
                    for &(bz, by, bx, rz, r, gain) in &blobs {
                        let q = ((z as f64 - bz) / rz).powi(2) + ((yf - by) / r).powi(2) + ((xf - bx) / r).powi(2);
                        if q <= 1.0 {
                            v += gain * spec.contrast;
                            break;
                        }
                    }
                }
                v += noise.sample(&mut rng);
                img.push(v as f32);
                mask.push(u8::from(fg));
            }
        }
    }
    Ok((
        Volume::new(d, spec.spacing, img)?,
        MaskVolume::new(d, spec.spacing, mask)?,
    ))
}
