//! Run directories and their manifests. Every writing command owns a fresh
//! output directory holding exactly one `manifest.json` that records the
//! resolved flags, seed, produced artifacts, tool version, and wall-clock
//! bounds of the run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub artifacts: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Creates the output directory, refusing one that already holds a run.
pub fn prepare_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    if out.join(MANIFEST_NAME).exists() {
        return Err(CliError::Usage(format!(
            "output directory {} already contains a run manifest; use a fresh directory",
            out.display()
        )));
    }
    Ok(())
}

/// Tracks a run in progress and finalizes its manifest.
pub struct RunScope {
    out: PathBuf,
    command: String,
    args: serde_json::Value,
    seed: u64,
    started_unix: u64,
    artifacts: Vec<String>,
}

impl RunScope {
    pub fn begin(
        out: &Path,
        command: &str,
        args: &impl Serialize,
        seed: u64,
    ) -> Result<RunScope, CliError> {
        prepare_out_dir(out)?;
        Ok(RunScope {
            out: out.to_path_buf(),
            command: command.to_string(),
            args: serde_json::to_value(args)?,
            seed,
            started_unix: unix_now(),
            artifacts: Vec::new(),
        })
    }

    /// Registers an artifact path (relative to the run directory) and
    /// returns its absolute location.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    pub fn finish(self) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command,
            args: self.args,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: self.artifacts,
            started_unix: self.started_unix,
            finished_unix: unix_now(),
        };
        let path = self.out.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, json + "\n")?;
        Ok(())
    }
}
