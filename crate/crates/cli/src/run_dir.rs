use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use axfi_core::dataset::{file_sha256, sha256_hex};
use serde::{Deserialize, Serialize};

/// Overrides the default `./runs` root for run directories.
pub const RUNS_ENV: &str = "AXFI_RUNS_DIR";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// `<root>/<command>-<hash>`, where the hash covers the resolved config and
/// seed. Identical runs land in the same directory; different ones never
/// overwrite each other.
pub fn run_dir(command: &str, canonical_config: &str, seed: u64) -> PathBuf {
    let digest = sha256_hex(format!("{command}\n{seed}\n{canonical_config}").as_bytes());
    runs_root().join(format!("{command}-{}", &digest[..16]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    pub workers: Option<usize>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("axfi".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert(
            "report_schema".into(),
            format!(
                "{} v{}",
                axfi_core::campaign::REPORT_SCHEMA,
                axfi_core::campaign::REPORT_VERSION
            ),
        );
        Self {
            command: command.into(),
            argv: std::env::args().collect(),
            config_path: None,
            config_sha256: None,
            seeds: BTreeMap::new(),
            versions,
            inputs: Vec::new(),
            outputs: Vec::new(),
            workers: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let sha256 = file_sha256(path)?;
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
