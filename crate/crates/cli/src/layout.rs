//! Run directory layout, dataset index and manifest.
//!
//! ```text
//! RUN/
//!   dataset.json      case ids and train/test split
//!   manifest.json     settings, seeds and digests per command
//!   checkpoints/      axial.pbrw, coronal.pbrw, sagittal.pbrw, primary.pbrw
//!   volumes/          <id>_image.pvol, <id>_mask.pvol and predictions
//!   reports/          CSV/JSON reports, training logs, timing.jsonl
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pbr_core::estimation::View;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::settings::{Settings, Split};
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    /// Open an existing run directory.
    pub fn open(root: &Path) -> Result<Self, CliError> {
        if !root.join("dataset.json").is_file() {
            return Err(CliError::Data(format!(
                "{} is not a run directory (no dataset.json; run `phantom` first)",
                root.display()
            )));
        }
        Ok(Self::new(root))
    }

    pub fn create(&self) -> Result<(), CliError> {
        for sub in ["checkpoints", "volumes", "reports"] {
            std::fs::create_dir_all(self.root.join(sub))?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.pbrw"))
    }

    pub fn view_checkpoint(&self, view: View) -> PathBuf {
        self.checkpoint(view.name())
    }

    pub fn primary_checkpoint(&self) -> PathBuf {
        self.checkpoint("primary")
    }

    /// `volumes/<id>_<kind>.pvol`; kinds: image, mask, prob, pred, init_prob, init_pred.
    pub fn volume(&self, id: &str, kind: &str) -> PathBuf {
        self.root.join("volumes").join(format!("{id}_{kind}.pvol"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    /// Path relative to the run root, with `/` separators.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub cases: Vec<Case>,
}

impl Dataset {
    pub fn load(run: &RunDir) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(run.dataset())?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("dataset.json: {e}")))
    }

    pub fn save(&self, run: &RunDir) -> Result<(), CliError> {
        write_json(&run.dataset(), self)
    }

    pub fn select(&self, split: Split) -> Vec<&Case> {
        self.cases
            .iter()
            .filter(|c| split == Split::All || c.split == split)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub settings: Option<Settings>,
    pub seeds: BTreeMap<String, u64>,
    /// Relative path to SHA-256 of files read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path to SHA-256 of files written.
    pub outputs: BTreeMap<String, String>,
}

impl CommandRecord {
    pub fn new(settings: &Settings) -> Self {
        Self {
            settings: Some(settings.clone()),
            ..Self::default()
        }
    }

    pub fn input(&mut self, run: &RunDir, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(run.relative(path), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, run: &RunDir, path: &Path) -> Result<(), CliError> {
        self.outputs.insert(run.relative(path), sha256_file(path)?);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tool: String,
    pub root_seed: u64,
    pub commands: BTreeMap<String, CommandRecord>,
}

impl Manifest {
    /// Record `command`, replacing any earlier record of the same command.
    pub fn record(run: &RunDir, command: &str, root_seed: u64, record: CommandRecord) -> Result<(), CliError> {
        let path = run.manifest();
        let mut m = if path.is_file() {
            serde_json::from_str(&std::fs::read_to_string(&path)?)
                .map_err(|e| CliError::Data(format!("manifest.json: {e}")))?
        } else {
            Manifest {
                version: MANIFEST_VERSION,
                tool: format!("pbrunet {}", env!("CARGO_PKG_VERSION")),
                root_seed,
                commands: BTreeMap::new(),
            }
        };
        m.root_seed = root_seed;
        m.commands.insert(command.to_string(), record);
        write_json(&path, &m)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
