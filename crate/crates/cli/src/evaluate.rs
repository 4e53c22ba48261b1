//! `eval` and `report`.

use std::io::Write;
use std::path::Path;

use log::info;
use pbr_core::metrics::{
    dsc_histogram, evaluate_volume, reliability_curve, slice_reports, small_target_report, summarize, volume_agreement,
    write_slice_csv, write_volume_csv, SliceReport, Summary, VolumeReport, DSC_EDGES,
};
use pbr_core::volume::{pvol, MaskVolume};
use serde::{Deserialize, Serialize};

use crate::commands::read_timing;
use crate::layout::{write_json, CommandRecord, Dataset, Manifest, RunDir};
use crate::settings::Settings;
use crate::CliError;

/// Compare two mask files and print the volume report as JSON.
pub fn eval_pair(pred: &Path, gt: &Path) -> Result<(), CliError> {
    let p = pvol::load_mask(pred)?;
    let g = pvol::load_mask(gt)?;
    let report = evaluate_volume(&pred.display().to_string(), &p, &g)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pbr: Summary,
    pub initial: Summary,
}

/// Prediction and ground truth for every case of the split.
struct Scored {
    id: String,
    pred: MaskVolume,
    initial: MaskVolume,
    gt: MaskVolume,
}

fn load_scored(run: &RunDir, settings: &Settings, record: &mut CommandRecord) -> Result<Vec<Scored>, CliError> {
    let dataset = Dataset::load(run)?;
    let cases = dataset.select(settings.split);
    if cases.is_empty() {
        return Err(CliError::Data(format!("no cases in split {:?}", settings.split)));
    }
    let mut out = Vec::with_capacity(cases.len());
    for c in cases {
        let paths = [
            run.volume(&c.id, "pred"),
            run.volume(&c.id, "init_pred"),
            run.volume(&c.id, "mask"),
        ];
        for p in &paths {
            if !p.is_file() {
                return Err(CliError::Data(format!("missing {} (run `infer` first)", p.display())));
            }
            record.input(run, p)?;
        }
        out.push(Scored {
            id: c.id.clone(),
            pred: pvol::load_mask(&paths[0])?,
            initial: pvol::load_mask(&paths[1])?,
            gt: pvol::load_mask(&paths[2])?,
        });
    }
    Ok(out)
}

fn write_buf(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn mean_dsc(s: &Summary) -> f64 {
    s.dsc.as_ref().map(|d| d.mean).unwrap_or(f64::NAN)
}

pub fn eval_run(run: &RunDir, settings: &Settings, timing: bool) -> Result<(), CliError> {
    let mut record = CommandRecord::new(settings);
    let scored = load_scored(run, settings, &mut record)?;
    let times = if timing {
        let path = run.report("timing.jsonl");
        if !path.is_file() {
            return Err(CliError::Data(format!("missing {} (run `infer` first)", path.display())));
        }
        Some(read_timing(&path)?)
    } else {
        None
    };
    let mut pbr: Vec<VolumeReport> = Vec::new();
    let mut initial: Vec<VolumeReport> = Vec::new();
    let mut slices: Vec<SliceReport> = Vec::new();
    for s in &scored {
        let mut r = evaluate_volume(&s.id, &s.pred, &s.gt)?;
        r.inference_seconds = times.as_ref().and_then(|t| t.get(&s.id)).map(|t| t.total_seconds);
        pbr.push(r);
        initial.push(evaluate_volume(&s.id, &s.initial, &s.gt)?);
        slices.extend(slice_reports(&s.id, &s.pred, &s.gt, settings.head_tail)?);
    }
    let summary = EvalSummary {
        pbr: summarize(&pbr),
        initial: summarize(&initial),
    };
    let outputs = [
        run.report("volumes.csv"),
        run.report("volumes_initial.csv"),
        run.report("slices.csv"),
        run.report("summary.json"),
    ];
    write_buf(&outputs[0], |b| write_volume_csv(&pbr, b))?;
    write_buf(&outputs[1], |b| write_volume_csv(&initial, b))?;
    write_buf(&outputs[2], |b| write_slice_csv(&slices, b))?;
    write_json(&outputs[3], &summary)?;
    for p in &outputs {
        record.output(run, p)?;
    }
    println!(
        "{} volumes: mean DSC {:.4} (initial estimate {:.4})",
        pbr.len(),
        mean_dsc(&summary.pbr),
        mean_dsc(&summary.initial)
    );
    info!("wrote reports to {}", run.report("").display());
    // Timing-dependent output is not reproducible, so it stays out of the manifest.
    if timing {
        record.outputs.remove(&run.relative(&outputs[0]));
    }
    Manifest::record(run, "eval", settings.seed, record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumePair {
    pub id: String,
    pub pred_mm3: f64,
    pub gt_mm3: f64,
}

pub fn report(run: &RunDir, settings: &Settings) -> Result<(), CliError> {
    let mut record = CommandRecord::new(settings);
    let scored = load_scored(run, settings, &mut record)?;
    let mut slices = Vec::new();
    let mut volumes = Vec::new();
    let mut dscs = Vec::new();
    for s in &scored {
        slices.extend(slice_reports(&s.id, &s.pred, &s.gt, settings.head_tail)?);
        dscs.push(evaluate_volume(&s.id, &s.pred, &s.gt)?.dsc);
        volumes.push(VolumePair {
            id: s.id.clone(),
            pred_mm3: s.pred.volume_mm3(),
            gt_mm3: s.gt.volume_mm3(),
        });
    }
    let labelled: Vec<SliceReport> = slices.iter().filter(|r| r.gt_pixels > 0).cloned().collect();
    let histogram = dsc_histogram(&labelled, &DSC_EDGES)?;
    let curve = reliability_curve(&dscs)?;
    let pred: Vec<f64> = volumes.iter().map(|v| v.pred_mm3).collect();
    let gt: Vec<f64> = volumes.iter().map(|v| v.gt_mm3).collect();
    let agreement = volume_agreement(&pred, &gt)?;
    let small = small_target_report(&slices, settings.area_threshold, settings.head_tail);

    let outputs = [
        run.report("histogram.csv"),
        run.report("reliability.csv"),
        run.report("agreement.csv"),
        run.report("agreement.json"),
        run.report("small_targets.json"),
    ];
    write_buf(&outputs[0], |b| {
        writeln!(b, "lower,upper,count,percent")?;
        for (i, (c, p)) in histogram.counts.iter().zip(&histogram.percentages).enumerate() {
            writeln!(b, "{:.2},{:.2},{c},{p:.6}", histogram.edges[i], histogram.edges[i + 1])?;
        }
        Ok(())
    })?;
    write_buf(&outputs[1], |b| {
        writeln!(b, "threshold,fraction")?;
        for (t, f) in &curve {
            writeln!(b, "{t:.2},{f:.6}")?;
        }
        Ok(())
    })?;
    write_buf(&outputs[2], |b| {
        writeln!(b, "id,pred_mm3,gt_mm3")?;
        for v in &volumes {
            writeln!(b, "{},{:.6},{:.6}", v.id, v.pred_mm3, v.gt_mm3)?;
        }
        Ok(())
    })?;
    write_json(&outputs[3], &agreement)?;
    write_json(&outputs[4], &small)?;
    for p in &outputs {
        record.output(run, p)?;
    }
    println!(
        "{} slices with ground truth over {} volumes; histogram {:?}",
        labelled.len(),
        scored.len(),
        histogram.counts
    );
    Manifest::record(run, "report", settings.seed, record)
}
