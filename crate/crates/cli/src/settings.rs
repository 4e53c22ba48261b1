//! Resolved run configuration. Values come from, in increasing precedence,
//! built-in defaults, a flat `key = value` config file, and command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use pbr_core::estimation::ViewMode;
use pbr_core::nn::OptimizerKind;
use pbr_core::pbr::{GuidanceSource, SweepConfig, SweepMode, TieRule};
use pbr_core::training::{Phase, Schedule};
use pbr_core::volume::{AugmentRanges, Dims, HuWindow, PhantomSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(format!("unknown split `{s}` (expected train, test or all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub deterministic: bool,
    pub workers: usize,

    pub count: usize,
    pub test_count: usize,
    pub dims: Dims,
    pub noise_std: f64,
    pub contrast: f64,
    pub distractors: usize,

    pub hu_lo: f32,
    pub hu_hi: f32,

    pub view_mode: ViewMode,
    /// `all` or a single view name.
    pub view: String,
    pub base_width: usize,
    pub batch_size: usize,
    pub sgd_epochs: usize,
    pub sgd_lr: f64,
    pub adam_epochs: usize,
    pub adam_lr: f64,
    pub primary_epochs: usize,
    pub primary_lr: f64,
    pub val_fraction: f64,
    pub plateau_patience: usize,
    pub augment: bool,
    pub guidance: GuidanceSource,

    pub depth: usize,
    pub threshold: f64,
    pub sweeps: SweepMode,
    pub tie_rule: TieRule,
    pub split: Split,

    pub area_threshold: usize,
    pub head_tail: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let phantom = PhantomSpec::new(0, Dims::new(32, 64, 64));
        let hu = HuWindow::default();
        Self {
            seed: 0,
            deterministic: true,
            workers: 1,
            count: 20,
            test_count: 4,
            dims: phantom.dims,
            noise_std: phantom.noise_std,
            contrast: phantom.contrast,
            distractors: phantom.distractors,
            hu_lo: hu.lo,
            hu_hi: hu.hi,
            view_mode: ViewMode::ThreeView,
            view: "all".into(),
            base_width: 32,
            batch_size: 1,
            sgd_epochs: 300,
            sgd_lr: 1e-4,
            adam_epochs: 400,
            adam_lr: 1e-5,
            primary_epochs: 300,
            primary_lr: 1e-5,
            val_fraction: 0.01,
            plateau_patience: 20,
            augment: true,
            guidance: GuidanceSource::Estimated,
            depth: 1,
            threshold: 0.5,
            sweeps: SweepMode::Bidirectional,
            tie_rule: TieRule::Strict,
            split: Split::Test,
            area_threshold: 300,
            head_tail: 3,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "deterministic",
    "workers",
    "count",
    "test_count",
    "dims",
    "noise_std",
    "contrast",
    "distractors",
    "hu_lo",
    "hu_hi",
    "view_mode",
    "view",
    "base_width",
    "batch_size",
    "sgd_epochs",
    "sgd_lr",
    "adam_epochs",
    "adam_lr",
    "primary_epochs",
    "primary_lr",
    "val_fraction",
    "plateau_patience",
    "augment",
    "guidance",
    "depth",
    "threshold",
    "sweeps",
    "tie_rule",
    "split",
    "area_threshold",
    "head_tail",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid value `{value}` for `{key}`: {e}")))
}

impl Settings {
    fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "deterministic" => self.deterministic = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "count" => self.count = parse(key, v)?,
            "test_count" => self.test_count = parse(key, v)?,
            "dims" => self.dims = parse(key, v)?,
            "noise_std" => self.noise_std = parse(key, v)?,
            "contrast" => self.contrast = parse(key, v)?,
            "distractors" => self.distractors = parse(key, v)?,
            "hu_lo" => self.hu_lo = parse(key, v)?,
            "hu_hi" => self.hu_hi = parse(key, v)?,
            "view_mode" => self.view_mode = parse(key, v)?,
            "view" => self.view = v.to_string(),
            "base_width" => self.base_width = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "sgd_epochs" => self.sgd_epochs = parse(key, v)?,
            "sgd_lr" => self.sgd_lr = parse(key, v)?,
            "adam_epochs" => self.adam_epochs = parse(key, v)?,
            "adam_lr" => self.adam_lr = parse(key, v)?,
            "primary_epochs" => self.primary_epochs = parse(key, v)?,
            "primary_lr" => self.primary_lr = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "plateau_patience" => self.plateau_patience = parse(key, v)?,
            "augment" => self.augment = parse(key, v)?,
            "guidance" => self.guidance = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "sweeps" => self.sweeps = parse(key, v)?,
            "tie_rule" => self.tie_rule = parse(key, v)?,
            "split" => self.split = parse(key, v)?,
            "area_threshold" => self.area_threshold = parse(key, v)?,
            "head_tail" => self.head_tail = parse(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults, overridden by `file` entries, overridden by `flags`.
    pub fn resolve(file: Option<&Path>, flags: &[(&str, Option<String>)]) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
            for (key, value) in parse_config(&text)? {
                s.set(&key, &value)?;
            }
        }
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v)?;
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if !(1..=3).contains(&self.depth) {
            return bad(format!("depth must be 1, 2 or 3, got {}", self.depth));
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.view != "all" && self.view.parse::<pbr_core::estimation::View>().is_err() {
            return bad(format!("view must be all, axial, coronal or sagittal, got `{}`", self.view));
        }
        Ok(())
    }

    pub fn hu_window(&self) -> HuWindow {
        HuWindow {
            lo: self.hu_lo,
            hi: self.hu_hi,
        }
    }

    pub fn phantom_spec(&self, seed: u64) -> PhantomSpec {
        let mut spec = PhantomSpec::new(seed, self.dims);
        spec.noise_std = self.noise_std;
        spec.contrast = self.contrast;
        spec.distractors = self.distractors;
        spec
    }

    fn schedule(&self, phases: Vec<Phase>) -> Schedule {
        let mut s = Schedule::with_phases(phases.into_iter().filter(|p| p.epochs > 0).collect());
        s.batch_size = self.batch_size;
        s.val_fraction = self.val_fraction;
        s.plateau_patience = self.plateau_patience;
        s.augment = self.augment.then(AugmentRanges::default);
        s
    }

    pub fn initial_schedule(&self) -> Schedule {
        self.schedule(vec![
            Phase {
                optimizer: OptimizerKind::Sgd,
                epochs: self.sgd_epochs,
                lr: self.sgd_lr,
            },
            Phase {
                optimizer: OptimizerKind::Adam,
                epochs: self.adam_epochs,
                lr: self.adam_lr,
            },
        ])
    }

    pub fn primary_schedule(&self) -> Schedule {
        self.schedule(vec![Phase {
            optimizer: OptimizerKind::Adam,
            epochs: self.primary_epochs,
            lr: self.primary_lr,
        }])
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            depth: self.depth,
            threshold: self.threshold,
            sweeps: self.sweeps,
            tie_rule: self.tie_rule,
        }
    }
}

/// Parse `key = value` lines; `#` starts a comment. Dashes in keys are
/// read as underscores.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", n + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out.into_iter().collect())
}
