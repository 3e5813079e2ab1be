//! Run manifests written next to every output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// True when the seed was drawn because none was given.
    pub seed_derived: bool,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.into(),
            argv: std::env::args().collect(),
            config_paths: Vec::new(),
            seed: None,
            seed_derived: false,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: now(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, path: &Path) {
        self.config_paths.push(path.to_path_buf());
    }

    pub fn seed(&mut self, seed: u64, derived: bool) {
        self.seed = Some(seed);
        self.seed_derived = derived;
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `dir/manifest.json`.
    pub fn finish_dir(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = now();
        let path = dir.join(FILE_NAME);
        write_json(&path, &self)?;
        Ok(path)
    }

    /// Writes `<file>.manifest.json` beside a single-file output.
    pub fn finish_beside(mut self, file: &Path) -> Result<PathBuf> {
        self.finished_unix = now();
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".");
        name.push(FILE_NAME);
        let path = file.with_file_name(name);
        write_json(&path, &self)?;
        Ok(path)
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
