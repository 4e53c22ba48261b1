//! Overlap and distance metrics between binary masks, and the slice- and
//! cohort-level reports built from them.

mod distance;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::{same_dims, MaskVolume};

pub use distance::{edt_squared, hausdorff, HausdorffMode};
pub use report::{
    dsc_histogram, evaluate_volume, reliability_curve, slice_reports, small_target_report, summarize,
    volume_agreement, write_slice_csv, write_volume_csv, Agreement, Cohort, Histogram, SliceReport, SmallTargetReport,
    Stats, Summary, VolumeReport, DSC_EDGES,
};

/// Voxel counts shared by the overlap metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overlap {
    /// `|a ∩ b|`
    pub both: usize,
    pub a: usize,
    pub b: usize,
    pub total: usize,
}

impl Overlap {
    pub fn of(a: &[u8], b: &[u8]) -> Self {
        assert_eq!(a.len(), b.len(), "overlap of masks with different sizes");
        let mut o = Overlap {
            both: 0,
            a: 0,
            b: 0,
            total: a.len(),
        };
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x != 0, y != 0);
            o.both += usize::from(x && y);
            o.a += usize::from(x);
            o.b += usize::from(y);
        }
        o
    }

    pub fn masks(a: &MaskVolume, b: &MaskVolume) -> Result<Self> {
        same_dims(a.dims(), b.dims())?;
        Ok(Self::of(a.data(), b.data()))
    }

    /// `2|a∩b| / (|a| + |b|)`, 1 when both are empty.
    pub fn dsc(&self) -> f64 {
        if self.a + self.b == 0 {
            1.0
        } else {
            2.0 * self.both as f64 / (self.a + self.b) as f64
        }
    }

    /// `|a∩b| / |a∪b|`, 1 when both are empty.
    pub fn iou(&self) -> f64 {
        let union = self.a + self.b - self.both;
        if union == 0 {
            1.0
        } else {
            self.both as f64 / union as f64
        }
    }

    /// With `a` the prediction and `b` the ground truth.
    pub fn recall(&self) -> Score {
        Score::ratio(self.both, self.b, self.a == 0)
    }

    pub fn precision(&self) -> Score {
        Score::ratio(self.both, self.a, self.b == 0)
    }
}

/// A ratio that may be undefined. Undefined ratios report value 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub defined: bool,
}

impl Score {
    /// `num / den`; a zero denominator is 1 when `other_empty`, otherwise undefined.
    fn ratio(num: usize, den: usize, other_empty: bool) -> Self {
        match (den, other_empty) {
            (0, true) => Score {
                value: 1.0,
                defined: true,
            },
            (0, false) => Score {
                value: 0.0,
                defined: false,
            },
            _ => Score {
                value: num as f64 / den as f64,
                defined: true,
            },
        }
    }
}

pub fn dsc(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    Ok(Overlap::masks(a, b)?.dsc())
}

pub fn iou(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    Ok(Overlap::masks(a, b)?.iou())
}

pub fn recall(pred: &MaskVolume, gt: &MaskVolume) -> Result<Score> {
    Ok(Overlap::masks(pred, gt)?.recall())
}

pub fn precision(pred: &MaskVolume, gt: &MaskVolume) -> Result<Score> {
    Ok(Overlap::masks(pred, gt)?.precision())
}

/// Root mean squared voxel disagreement (dimensionless).
pub fn rmse(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    let o = Overlap::masks(pred, gt)?;
    let differ = o.a + o.b - 2 * o.both;
    Ok((differ as f64 / o.total as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn mask(bits: &[u8]) -> MaskVolume {
        MaskVolume::new(Dims::new(1, 1, bits.len()), Spacing::default(), bits.to_vec()).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dsc(&a, &mask(&[0, 1, 1, 0])).unwrap(), 0.5);
        assert_eq!(iou(&mask(&[1, 1, 1, 0]), &mask(&[0, 1, 1, 1])).unwrap(), 0.5);
        assert_eq!(recall(&a, &a).unwrap().value, 1.0);
        assert_eq!(precision(&a, &a).unwrap().value, 1.0);
    }

    #[test]
    fn empty_conventions() {
        let e = mask(&[0, 0]);
        let f = mask(&[1, 0]);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(recall(&e, &e).unwrap(), Score { value: 1.0, defined: true });
        assert_eq!(recall(&f, &e).unwrap(), Score { value: 0.0, defined: false });
        assert_eq!(precision(&e, &f).unwrap(), Score { value: 0.0, defined: false });
        assert_eq!(precision(&e, &e).unwrap().value, 1.0);
        assert_eq!(recall(&e, &f).unwrap(), Score { value: 0.0, defined: true });
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&mask(&[1, 0, 1, 0]), &mask(&[1, 0, 1, 0])).unwrap(), 0.0);
        assert_eq!(rmse(&mask(&[1, 1, 1]), &mask(&[0, 0, 0])).unwrap(), 1.0);
        assert_eq!(rmse(&mask(&[1, 0, 0, 0]), &mask(&[0, 0, 0, 0])).unwrap(), 0.5);
    }

    #[test]
    fn dims_mismatch_is_an_error() {
        assert!(dsc(&mask(&[1]), &mask(&[1, 0])).is_err());
    }
}
