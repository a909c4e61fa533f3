use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fraud_core::{Error, Result};

use crate::config::ExperimentConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command run. Timings make it the one output that is not
/// reproducible byte for byte; everything it lists is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    pub timings_seconds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_seconds: Vec<f64>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.master_seed,
            config: config.clone(),
            artifacts: Vec::new(),
            timings_seconds: BTreeMap::new(),
            epoch_seconds: Vec::new(),
        }
    }

    /// Hashes `name` (a file inside `out_dir`) as it is now.
    pub fn record(&mut self, out_dir: &Path, name: &str) -> Result<()> {
        let (sha256, bytes) = sha256_file(&out_dir.join(name))?;
        self.artifacts.retain(|a| a.path != Path::new(name));
        self.artifacts.push(Artifact {
            path: PathBuf::from(name),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("manifest.{}.json", self.command)
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(self.file_name());
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Names of listed artifacts whose current content no longer matches.
    pub fn verify(&self, out_dir: &Path) -> Vec<PathBuf> {
        self.artifacts
            .iter()
            .filter(|a| {
                sha256_file(&out_dir.join(&a.path))
                    .map(|(h, _)| h != a.sha256)
                    .unwrap_or(true)
            })
            .map(|a| a.path.clone())
            .collect()
    }
}
