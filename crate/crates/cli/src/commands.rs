//! `phantom`, `train-init`, `train-primary` and `infer`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use pbr_core::estimation::{InitialEstimator, View};
use pbr_core::pbr::{self, StageTiming};
use pbr_core::seed;
use pbr_core::training::{EpochLog, TrainReport};
use pbr_core::volume::{gen_phantom, preprocess, pvol, MaskVolume, Volume};
use pbr_core::UNet;
use serde::{Deserialize, Serialize};

use crate::layout::{CommandRecord, Dataset, Manifest, RunDir, Case};
use crate::settings::{Settings, Split};
use crate::CliError;

/// Map `f` over `items` with at most `workers` in flight. Results keep
/// input order; the first error wins.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R, CliError> + Sync,
) -> Result<Vec<R>, CliError> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R, CliError>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Preprocessed image and ground-truth mask of one case.
pub fn load_case(run: &RunDir, case: &Case, settings: &Settings) -> Result<(Volume, MaskVolume), CliError> {
    let raw = pvol::load_volume(&run.volume(&case.id, "image"))?;
    let mask = pvol::load_mask(&run.volume(&case.id, "mask"))?;
    pbr_core::volume::same_dims(raw.dims(), mask.dims())?;
    let pre = preprocess(&raw, settings.hu_window())?;
    if let Some(w) = pre.warning {
        warn!("{}: {w}", case.id);
    }
    Ok((pre.volume, mask))
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("missing {} ({hint})", path.display())))
    }
}

fn cases(run: &RunDir, split: Split) -> Result<Vec<Case>, CliError> {
    let dataset = Dataset::load(run)?;
    let selected: Vec<Case> = dataset.select(split).into_iter().cloned().collect();
    if selected.is_empty() {
        return Err(CliError::Data(format!("no cases in split {split:?}")));
    }
    for c in &selected {
        require(&run.volume(&c.id, "image"), "image volume")?;
        require(&run.volume(&c.id, "mask"), "mask volume")?;
    }
    Ok(selected)
}

fn training_set(run: &RunDir, settings: &Settings, record: &mut CommandRecord) -> Result<Vec<(Volume, MaskVolume)>, CliError> {
    let train = cases(run, Split::Train)?;
    for c in &train {
        record.input(run, &run.volume(&c.id, "image"))?;
        record.input(run, &run.volume(&c.id, "mask"))?;
    }
    parallel_map(&train, settings.workers, |c| load_case(run, c, settings))
}

fn log_epoch(tag: &str) -> impl FnMut(&EpochLog) + '_ {
    move |e: &EpochLog| {
        let val = e.val_dice.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        info!("{tag} epoch {} {} lr {:e} loss {:.4} val dice {val}", e.epoch, e.phase, e.lr, e.train_loss);
    }
}

fn write_train_log(run: &RunDir, name: &str, report: &TrainReport) -> Result<std::path::PathBuf, CliError> {
    let path = run.report(&format!("train_{name}.csv"));
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(&path, &buf)?;
    Ok(path)
}

pub fn phantom(run: &RunDir, settings: &Settings) -> Result<(), CliError> {
    if settings.count == 0 || settings.test_count >= settings.count {
        return Err(CliError::Usage(format!(
            "need 0 <= test_count < count, got test_count {} and count {}",
            settings.test_count, settings.count
        )));
    }
    settings.phantom_spec(0).validate()?;
    run.create()?;
    let root = seed::derive_labeled(settings.seed, "phantom");
    let train_count = settings.count - settings.test_count;
    let cases: Vec<Case> = (0..settings.count)
        .map(|i| Case {
            id: format!("case{i:03}"),
            split: if i < train_count { Split::Train } else { Split::Test },
            seed: seed::derive(root, &[i as u64]),
        })
        .collect();
    let mut record = CommandRecord::new(settings);
    record.seeds.insert("phantom".into(), root);
    parallel_map(&cases, settings.workers, |c| {
        let (image, mask) = gen_phantom(&settings.phantom_spec(c.seed))?;
        write_file(&run.volume(&c.id, "image"), &pvol::write_volume(&image))?;
        write_file(&run.volume(&c.id, "mask"), &pvol::write_mask(&mask))?;
        Ok(())
    })?;
    for c in &cases {
        record.output(run, &run.volume(&c.id, "image"))?;
        record.output(run, &run.volume(&c.id, "mask"))?;
    }
    Dataset { cases }.save(run)?;
    record.output(run, &run.dataset())?;
    info!(
        "generated {} phantoms of {} ({} train, {} test) in {}",
        settings.count,
        settings.dims,
        train_count,
        settings.test_count,
        run.root().display()
    );
    Manifest::record(run, "phantom", settings.seed, record)
}

fn selected_views(settings: &Settings) -> Result<Vec<View>, CliError> {
    let all = settings.view_mode.views();
    if settings.view == "all" {
        return Ok(all.to_vec());
    }
    let v: View = settings.view.parse()?;
    if !all.contains(&v) {
        return Err(CliError::Usage(format!("view {v} is not used in {} mode", settings.view_mode)));
    }
    Ok(vec![v])
}

pub fn train_init(run: &RunDir, settings: &Settings) -> Result<(), CliError> {
    let views = selected_views(settings)?;
    let schedule = settings.initial_schedule();
    schedule.validate()?;
    let root = seed::derive_labeled(settings.seed, "train-init");
    let mut base = CommandRecord::new(settings);
    let data = training_set(run, settings, &mut base)?;
    let trained = parallel_map(&views, settings.workers, |&view| {
        info!("training {view} network on {} volumes", data.len());
        let tag = view.name();
        let (net, report) = pbr_core::training::train_initial(&data, view, settings.base_width, &schedule, root, &mut log_epoch(tag))?;
        Ok((view, net, report))
    })?;
    for (view, net, report) in trained {
        let mut record = base.clone();
        record.seeds.insert("train-init".into(), root);
        let ckpt = run.view_checkpoint(view);
        write_file(&ckpt, &net.save())?;
        let log = write_train_log(run, view.name(), &report)?;
        record.output(run, &ckpt)?;
        record.output(run, &log)?;
        info!("wrote {}", ckpt.display());
        Manifest::record(run, &format!("train-init.{}", view.name()), settings.seed, record)?;
    }
    Ok(())
}

/// Initial estimator from the view checkpoints required by the view mode.
pub fn load_estimator(run: &RunDir, settings: &Settings, record: &mut CommandRecord) -> Result<InitialEstimator, CliError> {
    let mut nets = Vec::new();
    for &view in settings.view_mode.views() {
        let path = run.view_checkpoint(view);
        require(&path, "run `train-init` first")?;
        nets.push((view, UNet::load(&std::fs::read(&path)?)?));
        record.input(run, &path)?;
    }
    Ok(InitialEstimator::new(nets)?)
}

pub fn train_primary(run: &RunDir, settings: &Settings) -> Result<(), CliError> {
    let schedule = settings.primary_schedule();
    schedule.validate()?;
    let mut record = CommandRecord::new(settings);
    let estimator = load_estimator(run, settings, &mut record)?;
    let data = training_set(run, settings, &mut record)?;
    let root = seed::derive_labeled(settings.seed, "train-primary");
    record.seeds.insert("train-primary".into(), root);
    info!("training primary network (depth {}, {} guidance)", settings.depth, settings.guidance);
    let (net, report) = pbr::train_primary(
        &data,
        &estimator,
        settings.depth,
        settings.base_width,
        &schedule,
        settings.guidance,
        root,
        &mut log_epoch("primary"),
    )?;
    let ckpt = run.primary_checkpoint();
    write_file(&ckpt, &net.save())?;
    let log = write_train_log(run, "primary", &report)?;
    record.output(run, &ckpt)?;
    record.output(run, &log)?;
    info!("wrote {}", ckpt.display());
    Manifest::record(run, "train-primary", settings.seed, record)
}

/// One line of `reports/timing.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeTiming {
    pub id: String,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

pub fn read_timing(path: &Path) -> Result<BTreeMap<String, VolumeTiming>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let t: VolumeTiming =
                serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok((t.id.clone(), t))
        })
        .collect()
}

pub fn infer(run: &RunDir, settings: &Settings) -> Result<(), CliError> {
    let config = settings.sweep_config();
    config.validate()?;
    let mut record = CommandRecord::new(settings);
    let estimator = load_estimator(run, settings, &mut record)?;
    let primary_path = run.primary_checkpoint();
    require(&primary_path, "run `train-primary` first")?;
    let primary = UNet::<f32>::load(&std::fs::read(&primary_path)?)?;
    record.input(run, &primary_path)?;
    let want = 2 * settings.depth + 1;
    if primary.config().in_channels != want {
        return Err(CliError::Usage(format!(
            "primary checkpoint takes {} channels; depth {} needs {want}",
            primary.config().in_channels,
            settings.depth
        )));
    }
    let selected = cases(run, settings.split)?;
    for c in &selected {
        record.input(run, &run.volume(&c.id, "image"))?;
    }
    let timings = parallel_map(&selected, settings.workers, |c| {
        let raw = pvol::load_volume(&run.volume(&c.id, "image"))?;
        let pre = preprocess(&raw, settings.hu_window())?;
        if let Some(w) = pre.warning {
            warn!("{}: {w}", c.id);
        }
        let out = pbr::infer_pbr(&estimator, &primary, &pre.volume, &config)?;
        let initial_mask = pbr::binarize(&out.initial, config.threshold, config.tie_rule)?;
        write_file(&run.volume(&c.id, "prob"), &pvol::write_prob(&out.prob))?;
        write_file(&run.volume(&c.id, "pred"), &pvol::write_mask(&out.mask))?;
        write_file(&run.volume(&c.id, "init_prob"), &pvol::write_prob(&out.initial))?;
        write_file(&run.volume(&c.id, "init_pred"), &pvol::write_mask(&initial_mask))?;
        let total_seconds = out.timing.iter().map(|t| t.seconds).sum();
        Ok(VolumeTiming {
            id: c.id.clone(),
            stages: out.timing,
            total_seconds,
        })
    })?;
    let mut jsonl = Vec::new();
    for t in &timings {
        serde_json::to_writer(&mut jsonl, t).map_err(|e| CliError::Data(e.to_string()))?;
        jsonl.push(b'\n');
        let stages: Vec<String> = t.stages.iter().map(|s| format!("{} {:.3}s", s.stage, s.seconds)).collect();
        println!("{}: {:.3}s ({})", t.id, t.total_seconds, stages.join(", "));
    }
    write_file(&run.report("timing.jsonl"), &jsonl)?;
    for c in &selected {
        for kind in ["prob", "pred", "init_prob", "init_pred"] {
            record.output(run, &run.volume(&c.id, kind))?;
        }
    }
    std::io::stdout().flush()?;
    Manifest::record(run, "infer", settings.seed, record)
}
