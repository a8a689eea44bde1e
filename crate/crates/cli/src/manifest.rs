//! Reproducibility manifest written beside every artifact directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Serialize to `<dir>/manifest.json` via a temp file + rename, so a
    /// partially written manifest is never observable.
    pub fn write(self, dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let final_path = dir.join("manifest.json");
        let tmp_path = dir.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&tmp_path, text)
            .with_context(|| format!("writing {}", tmp_path.display()))?;
        std::fs::rename(&tmp_path, &final_path)
            .with_context(|| format!("renaming into {}", final_path.display()))?;
        Ok(())
    }
}
