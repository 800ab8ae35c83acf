//! Machine-readable run logs and failure cleanup of partial outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Config;
use crate::CliError;

pub const RUN_LOG: &str = "run_log.json";

/// Holds no timestamps or host details, so identical runs give identical
/// bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLog {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Map<String, Value>,
    pub metrics: Value,
    pub artifacts: Vec<String>,
}

impl RunLog {
    pub fn new(command: &str, cfg: &Config, metrics: Value, artifacts: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.to_json(),
            metrics,
            artifacts,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&json!(self)).expect("run log serializes");
        s.push('\n');
        s
    }
}

/// Tracks what a command creates under its output directory and removes it
/// again unless [`Outputs::commit`] is called.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    created_root: bool,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        let created_root = !root.exists();
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            created_root,
            files: Vec::new(),
            dirs: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers a file path under the root.
    pub fn file(&mut self, rel: &str) -> PathBuf {
        let p = self.root.join(rel);
        self.files.push(p.clone());
        p
    }

    /// Creates and registers a subdirectory; pre-existing ones are left alone
    /// on cleanup.
    pub fn dir(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.root.join(rel);
        if !p.exists() {
            fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
            self.dirs.push(p.clone());
        }
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let p = self.file(rel);
        fs::write(&p, contents).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
        if self.created_root {
            let _ = fs::remove_dir_all(&self.root);
        }
    }
}
