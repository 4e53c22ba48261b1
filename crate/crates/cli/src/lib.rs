//! Command-line driver: phantom generation, training, inference, evaluation
//! and reporting over a run directory.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod evaluate;
pub mod layout;
pub mod settings;

pub use layout::{Dataset, Manifest, RunDir};
pub use settings::{Settings, Split};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] pbr_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 1 usage or configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use pbr_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Numerical(_)) => 3,
            _ => 2,
        }
    }
}

macro_rules! overrides {
    ($($field:ident => $help:literal,)*) => {
        /// Settings overrides shared by every subcommand. Unset flags fall
        /// back to the config file, then to built-in defaults.
        #[derive(Args, Debug, Clone, Default)]
        pub struct Overrides {
            /// Flat `key = value` config file
            #[arg(long, value_name = "FILE")]
            pub config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE", help = $help)]
                pub $field: Option<String>,
            )*
        }

        impl Overrides {
            pub fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
                vec![$((stringify!($field), self.$field.clone()),)*]
            }
        }
    };
}

overrides! {
    seed => "Root seed for every random stream",
    deterministic => "Deterministic mode (true/false)",
    workers => "Volumes or views processed concurrently",
    count => "Number of phantoms to generate",
    test_count => "Phantoms held out for testing",
    dims => "Phantom size as MxHxW",
    noise_std => "Phantom noise standard deviation (HU)",
    contrast => "Phantom organ contrast over background (HU)",
    distractors => "Distractor blobs per phantom",
    hu_lo => "Lower HU clamp",
    hu_hi => "Upper HU clamp",
    view_mode => "3-view or axial-only",
    view => "all, axial, coronal or sagittal",
    base_width => "U-Net width of the first level",
    batch_size => "Training batch size",
    sgd_epochs => "Initial-estimation SGD epochs",
    sgd_lr => "Initial-estimation SGD learning rate",
    adam_epochs => "Initial-estimation Adam epochs",
    adam_lr => "Initial-estimation Adam learning rate",
    primary_epochs => "Primary network Adam epochs",
    primary_lr => "Primary network Adam learning rate",
    val_fraction => "Fraction of slices held out for validation",
    plateau_patience => "Epochs without improvement before the learning rate halves",
    augment => "Random rotation, shear and flips during training (true/false)",
    guidance => "Primary training guidance: estimated or teacher-forced",
    depth => "Guidance depth d (1, 2 or 3)",
    threshold => "Binarization threshold in (0, 1)",
    sweeps => "forward+backward or forward",
    tie_rule => "strict (p = threshold is background) or inclusive",
    split => "train, test or all",
    area_threshold => "Small-target area threshold (pixels)",
    head_tail => "Head/tail slices per volume in the small-target report",
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Run directory
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl RunArgs {
    pub fn settings(&self) -> Result<Settings, CliError> {
        Settings::resolve(self.overrides.config.as_deref(), &self.overrides.pairs())
    }
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Run directory (evaluates every case of the selected split)
    #[arg(long, value_name = "DIR", required_unless_present_all = ["pred", "gt"])]
    pub run: Option<PathBuf>,
    /// Predicted mask file; compared directly against --gt
    #[arg(long, value_name = "FILE", requires = "gt", conflicts_with = "run")]
    pub pred: Option<PathBuf>,
    /// Ground-truth mask file
    #[arg(long, value_name = "FILE", requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Attach per-volume inference time from reports/timing.jsonl
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded phantom dataset into a new run directory
    Phantom(RunArgs),
    /// Train the initial-estimation network for each view
    TrainInit(RunArgs),
    /// Train the primary network on hybrid samples
    TrainPrimary(RunArgs),
    /// Segment volumes with initial estimation and recurrent refinement
    Infer(RunArgs),
    /// Score predictions against ground truth
    Eval(EvalArgs),
    /// Histogram, reliability curve, volume agreement and small-target tables
    Report(RunArgs),
}

#[derive(Parser, Debug)]
#[command(name = "pbrunet", version, about = "Recurrent U-Net pancreas segmentation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Parse `argv` (program name first), run the command and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Phantom(a) => commands::phantom(&RunDir::new(&a.run), &a.settings()?),
        Command::TrainInit(a) => commands::train_init(&RunDir::open(&a.run)?, &a.settings()?),
        Command::TrainPrimary(a) => commands::train_primary(&RunDir::open(&a.run)?, &a.settings()?),
        Command::Infer(a) => commands::infer(&RunDir::open(&a.run)?, &a.settings()?),
        Command::Eval(a) => {
            let settings = Settings::resolve(a.overrides.config.as_deref(), &a.overrides.pairs())?;
            match (&a.run, &a.pred, &a.gt) {
                (_, Some(pred), Some(gt)) => evaluate::eval_pair(pred, gt),
                (Some(run), _, _) => evaluate::eval_run(&RunDir::open(run)?, &settings, a.timing),
                _ => Err(CliError::Usage("eval needs --run or both --pred and --gt".into())),
            }
        }
        Command::Report(a) => evaluate::report(&RunDir::open(&a.run)?, &a.settings()?),
    }
}
