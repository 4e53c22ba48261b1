use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Intensity window applied before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub lo: f32,
    pub hi: f32,
}

impl Default for HuWindow {
    fn default() -> Self {
        Self { lo: -100.0, hi: 200.0 }
    }
}

impl HuWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!("HU window [{}, {}] is empty", self.lo, self.hi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub volume: Volume,
    /// Set when the clamped volume had zero variance and was mapped to zeros.
    pub warning: Option<String>,
}

/// Clamp to `window`, then shift and scale to zero mean and unit
/// (population) standard deviation over the whole volume.
pub fn preprocess(v: &Volume, window: HuWindow) -> Result<Preprocessed> {
    window.validate()?;
    let clamped: Vec<f64> = v
        .data()
        .iter()
        .map(|&x| x.clamp(window.lo, window.hi) as f64)
        .collect();
    let n = clamped.len() as f64;
    let mean = clamped.iter().sum::<f64>() / n;
    let var = clamped.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    // Variance below f32 resolution of the mean counts as constant.
    let floor = (mean.abs() * f32::EPSILON as f64).max(f64::MIN_POSITIVE);
    let (data, warning) = if std <= floor {
        let msg = format!("constant volume ({}) after windowing; normalized to zeros", v.dims());
        log::warn!("{msg}");
        (vec![0.0f32; clamped.len()], Some(msg))
    } else {
        (clamped.iter().map(|x| ((x - mean) / std) as f32).collect(), None)
    };
    Ok(Preprocessed {
        volume: Volume::new(v.dims(), v.spacing(), data)?,
        warning,
    })
}
