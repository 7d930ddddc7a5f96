//! Provenance record written next to every artifact as `<artifact>.manifest.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    /// Hex SHA-256 of the effective configuration.
    pub config_digest: String,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub workers: usize,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            args: std::env::args().collect(),
            ..Default::default()
        }
    }

    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    /// Writes `<artifact>.manifest.json`.
    pub fn write_for(&self, artifact: &Path) -> Result<PathBuf> {
        let path = Self::path_for(artifact);
        let json = serde_json::to_string_pretty(self).expect("manifest is always serializable");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
