//! Run manifests: what was computed from which inputs, and every output file
//! with its content hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cache::CacheStatus;
use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Contract {
    pub name: String,
    pub ok: bool,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub kind: String,
    pub family: String,
    pub tool_version: String,
    pub library_version: String,
    /// Hash of the resolved configuration.
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub cache: Vec<CacheStatus>,
    pub residuals: BTreeMap<String, f64>,
    pub contracts: Vec<Contract>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn build(
        cfg: &ExperimentConfig,
        out: &Path,
        files: &[PathBuf],
        cache: Vec<CacheStatus>,
        residuals: BTreeMap<String, f64>,
        contracts: Vec<Contract>,
    ) -> anyhow::Result<Self> {
        let mut entries = Vec::with_capacity(files.len());
        let mut seen = std::collections::BTreeSet::new();
        for f in files {
            if !seen.insert(f.clone()) {
                continue;
            }
            let data = std::fs::read(out.join(f))?;
            entries.push(FileEntry {
                path: f.clone(),
                bytes: data.len() as u64,
                sha256: sha256_hex(&data),
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let config_sha256 = sha256_hex(serde_json::to_string(cfg)?.as_bytes());
        Ok(Manifest {
            kind: cfg.kind.name().into(),
            family: cfg.family.clone(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            library_version: defecthom::VERSION.into(),
            config_sha256,
            config: cfg.clone(),
            cache,
            residuals,
            contracts,
            files: entries,
        })
    }

    pub fn write(&self, out: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(out.join(MANIFEST), text)?;
        Ok(())
    }
}
