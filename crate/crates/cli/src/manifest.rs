use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct HashedFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl HashedFile {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Provenance record written once into every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<HashedFile>,
    pub data: Vec<HashedFile>,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub timestamp: String,
    pub warnings: usize,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            data: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            warnings: 0,
        }
    }

    pub fn with_config(mut self, path: Option<&Path>) -> Result<Self> {
        self.config = path.map(HashedFile::of).transpose()?;
        Ok(self)
    }

    pub fn with_data(mut self, paths: &[&Path]) -> Result<Self> {
        for p in paths {
            self.data.push(HashedFile::of(p)?);
        }
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
