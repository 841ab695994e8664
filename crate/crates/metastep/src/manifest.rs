//! `manifest.json`: what produced the files of a run directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context as _, Result};
use metastep_core::RngStream;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    /// Hash of the configuration with the output directory blanked, so
    /// that reruns elsewhere reference the same value.
    pub config_sha256: String,
    pub dataset_sha256: Option<String>,
    pub seeds: BTreeMap<String, RngStream>,
    pub selected_iteration: Option<usize>,
    pub tasks_sha256: Option<String>,
    pub created_unix: u64,
    pub updated_unix: u64,
    /// Produced files (relative to the run directory) and their hashes.
    pub files: BTreeMap<String, String>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn config_sha256(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.out_dir = Default::default();
    sha256_hex(c.canonical_json().as_bytes())
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        let t = now();
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_sha256: config_sha256(config),
            dataset_sha256: None,
            seeds: BTreeMap::new(),
            selected_iteration: None,
            tasks_sha256: None,
            created_unix: t,
            updated_unix: t,
            files: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {} (run the earlier stages first)", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.updated_unix = now();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(FILE_NAME), text + "\n")
            .with_context(|| format!("writing manifest in {}", dir.display()))
    }

    /// Records `rel` (relative to `dir`) with its current hash.
    pub fn record(&mut self, dir: &Path, rel: &str) -> Result<String> {
        let hash = file_sha256(&dir.join(rel))?;
        self.files.insert(rel.to_string(), hash.clone());
        Ok(hash)
    }

    /// The reference line written at the top of every CSV.
    pub fn reference(&self) -> String {
        format!("{FILE_NAME} config_sha256={}", self.config_sha256)
    }
}
