use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rationalift::config::RunConfig;
use rationalift::training::{SkewConfig, SkewOutcome};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.cfg";
pub const METRICS: &str = "metrics.jsonl";
pub const FINAL: &str = "final.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.json";
pub const REPORTS: &str = "reports";

/// Root for default output directories: `$RATIONALIFT_OUT`, else `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("RATIONALIFT_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

pub fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(REPORTS)).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    #[serde(rename = "final")]
    pub final_metrics: Option<PathBuf>,
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

/// Written before any work starts and rewritten when the run ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub status: Status,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config: RunConfig,
    /// The resolved config as `key = value` lines; replay with `--config`.
    pub config_text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skew: Option<SkewConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skew_outcome: Option<SkewOutcome>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pre_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            status: Status::Running,
            seed: config.train.seed,
            out_dir: out_dir.to_path_buf(),
            config: config.clone(),
            config_text: config.to_text(),
            skew: None,
            skew_outcome: None,
            pre_acc: None,
            best_epoch: None,
            error: None,
            artifacts: Artifacts::default(),
        }
    }

    pub fn save(&self) -> Result<()> {
        write_json(&self.out_dir.join(MANIFEST), self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Appends one JSON object per line, flushing after each record.
pub struct JsonLines {
    file: fs::File,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(Self { file })
    }

    pub fn push<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut line = serde_json::to_string(value)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}
