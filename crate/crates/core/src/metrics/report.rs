use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{hausdorff, rmse, HausdorffMode, Overlap};
use crate::error::{Error, Result};
use crate::volume::{same_dims, MaskVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub id: String,
    pub dsc: f64,
    pub iou: f64,
    pub recall: f64,
    pub recall_defined: bool,
    pub precision: f64,
    pub precision_defined: bool,
    /// Prediction to ground truth, mm. Absent when either mask is empty.
    pub hd_directed: Option<f64>,
    pub hd_symmetric: Option<f64>,
    pub rmse: f64,
    pub pred_voxels: usize,
    pub gt_voxels: usize,
    pub inference_seconds: Option<f64>,
}

pub fn evaluate_volume(id: &str, pred: &MaskVolume, gt: &MaskVolume) -> Result<VolumeReport> {
    let o = Overlap::masks(pred, gt)?;
    let distance = |mode| match hausdorff(pred, gt, mode) {
        Ok(d) => Ok(Some(d)),
        Err(Error::UndefinedDistance(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let (recall, precision) = (o.recall(), o.precision());
    Ok(VolumeReport {
        id: id.to_string(),
        dsc: o.dsc(),
        iou: o.iou(),
        recall: recall.value,
        recall_defined: recall.defined,
        precision: precision.value,
        precision_defined: precision.defined,
        hd_directed: distance(HausdorffMode::Directed)?,
        hd_symmetric: distance(HausdorffMode::Symmetric)?,
        rmse: rmse(pred, gt)?,
        pred_voxels: o.a,
        gt_voxels: o.b,
        inference_seconds: None,
    })
}

fn opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_volume_csv(reports: &[VolumeReport], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "id,dsc,iou,recall,recall_defined,precision,precision_defined,hd_directed_mm,hd_symmetric_mm,rmse,pred_voxels,gt_voxels,inference_seconds"
    )?;
    for r in reports {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{:.6},{},{},{},{:.6},{},{},{}",
            r.id,
            r.dsc,
            r.iou,
            r.recall,
            r.recall_defined,
            r.precision,
            r.precision_defined,
            opt6(r.hd_directed),
            opt6(r.hd_symmetric),
            r.rmse,
            r.pred_voxels,
            r.gt_voxels,
            opt6(r.inference_seconds)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub volume: String,
    pub slice: usize,
    pub dsc: f64,
    pub gt_pixels: usize,
    pub pred_pixels: usize,
    /// Among the first or last `head_tail_n` slices containing ground truth.
    pub head_or_tail: bool,
}

/// One report per axial slice of `gt`.
pub fn slice_reports(id: &str, pred: &MaskVolume, gt: &MaskVolume, head_tail_n: usize) -> Result<Vec<SliceReport>> {
    same_dims(pred.dims(), gt.dims())?;
    let m = gt.dims().m;
    let fg: Vec<usize> = (0..m).filter(|&z| gt.slice_count(z) > 0).collect();
    let n = head_tail_n.min(fg.len());
    let edge = |z: usize| fg[..n].contains(&z) || fg[fg.len() - n..].contains(&z);
    Ok((0..m)
        .map(|z| {
            let o = Overlap::of(pred.slice(z), gt.slice(z));
            SliceReport {
                volume: id.to_string(),
                slice: z,
                dsc: o.dsc(),
                gt_pixels: o.b,
                pred_pixels: o.a,
                head_or_tail: edge(z),
            }
        })
        .collect())
}

pub fn write_slice_csv(reports: &[SliceReport], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "volume,slice,dsc,gt_pixels,pred_pixels,head_or_tail")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{:.6},{},{},{}",
            r.volume, r.slice, r.dsc, r.gt_pixels, r.pred_pixels, r.head_or_tail
        )?;
    }
    Ok(())
}

pub const DSC_EDGES: [f64; 7] = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub percentages: Vec<f64>,
}

/// Buckets `[e0, e1), [e1, e2), ..., [e_{k-1}, e_k]`: half-open except the last.
pub fn dsc_histogram(reports: &[SliceReport], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(format!("histogram edges must be increasing, got {edges:?}")));
    }
    let k = edges.len() - 1;
    let mut counts = vec![0; k];
    for r in reports {
        let bucket = (0..k).find(|&i| {
            let last = i + 1 == k;
            r.dsc >= edges[i] && (r.dsc < edges[i + 1] || (last && r.dsc <= edges[i + 1]))
        });
        if let Some(i) = bucket {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let percentages = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
        .collect();
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
        percentages,
    })
}

/// Fraction of volumes whose DSC is at least each threshold on the grid
/// 0.00, 0.01, ..., 1.00.
pub fn reliability_curve(dscs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if dscs.is_empty() {
        return Err(Error::Data("reliability curve needs at least one volume".into()));
    }
    let n = dscs.len() as f64;
    Ok((0..=100)
        .map(|i| {
            let t = i as f64 / 100.0;
            (t, dscs.iter().filter(|&&d| d >= t).count() as f64 / n)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub n: usize,
    /// Least-squares fit `pred = slope * gt + intercept`; absent when every
    /// ground-truth volume is equal.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Pearson correlation; absent when either side has zero variance.
    pub r: Option<f64>,
    /// Bland-Altman statistics of `pred - gt` (sample standard deviation).
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
    pub inside_fraction: f64,
}

/// Regression and Bland-Altman agreement between predicted and ground-truth
/// volumes (mm^3).
pub fn volume_agreement(pred: &[f64], gt: &[f64]) -> Result<Agreement> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted volumes vs {} ground truths", pred.len(), gt.len())));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::Data(format!("volume agreement needs at least 2 pairs, got {n}")));
    }
    let nf = n as f64;
    let mx = gt.iter().sum::<f64>() / nf;
    let my = pred.iter().sum::<f64>() / nf;
    let sxx: f64 = gt.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = pred.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = gt.iter().zip(pred).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = (sxx > 0.0).then(|| sxy / sxx);
    let intercept = slope.map(|b| my - b * mx);
    let r = (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt());
    let diffs: Vec<f64> = pred.iter().zip(gt).map(|(y, x)| y - x).collect();
    let mean_diff = diffs.iter().sum::<f64>() / nf;
    let sd_diff = (diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let (lower_limit, upper_limit) = (mean_diff - 1.96 * sd_diff, mean_diff + 1.96 * sd_diff);
    let inside = diffs.iter().filter(|&&d| d >= lower_limit && d <= upper_limit).count();
    Ok(Agreement {
        n,
        slope,
        intercept,
        r,
        mean_diff,
        sd_diff,
        lower_limit,
        upper_limit,
        inside_fraction: inside as f64 / nf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub slices: usize,
    /// Slices with DSC exactly 0.
    pub failed: usize,
    pub mean_dsc: Option<f64>,
    pub std_dsc: Option<f64>,
}

impl Cohort {
    fn of<'a>(members: impl Iterator<Item = &'a SliceReport>) -> Self {
        let dscs: Vec<f64> = members.map(|r| r.dsc).collect();
        let stats = Stats::of(&dscs);
        Cohort {
            slices: dscs.len(),
            failed: dscs.iter().filter(|&&d| d == 0.0).count(),
            mean_dsc: stats.as_ref().map(|s| s.mean),
            std_dsc: stats.map(|s| s.std),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.slices == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallTargetReport {
    pub area_threshold: usize,
    pub head_tail_n: usize,
    /// First and last `head_tail_n` ground-truth slices of each volume.
    pub head_tail: Cohort,
    /// Slices whose ground-truth area is positive and at most `area_threshold`.
    pub small: Cohort,
}

/// Cohort summaries. Head/tail membership comes from the reports' flags,
/// which [`slice_reports`] sets using its own `head_tail_n`.
pub fn small_target_report(reports: &[SliceReport], area_threshold: usize, head_tail_n: usize) -> SmallTargetReport {
    SmallTargetReport {
        area_threshold,
        head_tail_n,
        head_tail: Cohort::of(reports.iter().filter(|r| r.head_or_tail)),
        small: Cohort::of(reports.iter().filter(|r| r.gt_pixels > 0 && r.gt_pixels <= area_threshold)),
    }
}

/// Mean, population standard deviation, min and max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Stats {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub volumes: usize,
    pub dsc: Option<Stats>,
    pub iou: Option<Stats>,
    pub recall: Option<Stats>,
    pub precision: Option<Stats>,
    pub hd_directed: Option<Stats>,
    pub hd_symmetric: Option<Stats>,
    pub rmse: Option<Stats>,
}

/// Per-metric statistics over volumes. Undefined values are left out.
pub fn summarize(reports: &[VolumeReport]) -> Summary {
    let col = |f: &dyn Fn(&VolumeReport) -> Option<f64>| Stats::of(&reports.iter().filter_map(f).collect::<Vec<_>>());
    Summary {
        volumes: reports.len(),
        dsc: col(&|r| Some(r.dsc)),
        iou: col(&|r| Some(r.iou)),
        recall: col(&|r| r.recall_defined.then_some(r.recall)),
        precision: col(&|r| r.precision_defined.then_some(r.precision)),
        hd_directed: col(&|r| r.hd_directed),
        hd_symmetric: col(&|r| r.hd_symmetric),
        rmse: col(&|r| Some(r.rmse)),
    }
}
