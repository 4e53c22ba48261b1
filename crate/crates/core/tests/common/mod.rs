//! Brute-force references and stub predictors shared by integration tests.
#![allow(dead_code)]

use pbr_core::pbr::SlicePredictor;
use pbr_core::volume::{Dims, MaskVolume, Spacing};
use pbr_core::Result;
use rand::Rng;

/// Two masks of random size (each side 1..=8), spacing and density.
pub fn random_pair(rng: &mut impl Rng) -> (MaskVolume, MaskVolume) {
    let dims = Dims::new(rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
    let spacing = Spacing {
        z: rng.random_range(0.5..3.0),
        y: rng.random_range(0.5..2.0),
        x: rng.random_range(0.5..2.0),
    };
    let da = [0.0, 0.05, 0.3, 0.7, 1.0][rng.random_range(0..5)];
    let db = [0.0, 0.05, 0.3, 0.7, 1.0][rng.random_range(0..5)];
    let mut draw = |density: f64| -> MaskVolume {
        let data = (0..dims.len()).map(|_| u8::from(rng.random_bool(density))).collect();
        MaskVolume::new(dims, spacing, data).unwrap()
    };
    (draw(da), draw(db))
}

fn points(m: &MaskVolume) -> Vec<[f64; 3]> {
    let d = m.dims();
    let s = m.spacing();
    let mut out = Vec::new();
    for z in 0..d.m {
        for y in 0..d.h {
            for x in 0..d.w {
                if m.get(z, y, x) != 0 {
                    out.push([z as f64 * s.z as f64, y as f64 * s.y as f64, x as f64 * s.x as f64]);
                }
            }
        }
    }
    out
}

/// Max over `a` of the distance to the nearest point of `b`, by exhaustive search.
pub fn directed_hausdorff(a: &MaskVolume, b: &MaskVolume) -> Option<f64> {
    let (pa, pb) = (points(a), points(b));
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for p in &pa {
        let mut best = f64::INFINITY;
        for q in &pb {
            let d2: f64 = (0..3).map(|i| (p[i] - q[i]) * (p[i] - q[i])).sum();
            best = best.min(d2);
        }
        worst = worst.max(best.sqrt());
    }
    Some(worst)
}

pub struct Counts {
    pub inter: usize,
    pub union: usize,
    pub a: usize,
    pub b: usize,
}

pub fn counts(a: &MaskVolume, b: &MaskVolume) -> Counts {
    let set = |m: &MaskVolume| -> std::collections::BTreeSet<usize> {
        m.data().iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect()
    };
    let (sa, sb) = (set(a), set(b));
    Counts {
        inter: sa.intersection(&sb).count(),
        union: sa.union(&sb).count(),
        a: sa.len(),
        b: sb.len(),
    }
}

/// Returns the previous-slice channel (channel 0) as its prediction.
pub struct PreviousSlice {
    pub channels: usize,
}

impl SlicePredictor for PreviousSlice {
    fn channels(&self) -> usize {
        self.channels
    }

    fn predict(&self, sample: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
        Ok(sample[..h * w].to_vec())
    }
}

/// Logistic squash of a fixed mix of every channel.
pub struct Mixer {
    pub channels: usize,
    pub weights: Vec<f32>,
}

impl SlicePredictor for Mixer {
    fn channels(&self) -> usize {
        self.channels
    }

    fn predict(&self, sample: &[f32], h: usize, w: usize) -> Result<Vec<f32>> {
        let plane = h * w;
        Ok((0..plane)
            .map(|i| {
                let z: f32 = (0..self.channels).map(|k| self.weights[k] * sample[k * plane + i]).sum();
                1.0 / (1.0 + (-z).exp())
            })
            .collect())
    }
}
