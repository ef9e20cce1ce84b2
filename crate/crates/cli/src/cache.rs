//! Content-addressed cache of cell solutions.
//!
//! Entries live under `$DEFECTHOM_CACHE/cells/<sha256>` (default
//! `.defecthom-cache` in the working directory). The hash covers the family,
//! its parameters, the torus and the solver settings; a stored copy of the
//! key guards against collisions and format changes.

use std::path::{Path, PathBuf};

use defecthom::cell::{solve_cell, CellOptions, CellSolution};
use defecthom::coefficients::CoefficientSet;
use defecthom::fields::TorusGrid;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const CACHE_ENV: &str = "DEFECTHOM_CACHE";
const KEY_FILE: &str = "key.json";
/// Bumped whenever the stored layout changes.
const CACHE_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheStatus {
    Hit,
    Miss,
    Off,
}

pub fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".defecthom-cache"))
}

#[derive(Serialize)]
struct CellKey<'a> {
    cache_format: u32,
    library: &'a str,
    family: &'a str,
    params: &'a serde_json::Value,
    d: usize,
    n: usize,
    options: &'a CellOptions,
}

/// Canonical key text and its hex digest.
pub fn cell_key(cs: &CoefficientSet, g: &TorusGrid, opts: &CellOptions) -> (String, String) {
    let key = CellKey {
        cache_format: CACHE_FORMAT,
        library: defecthom::VERSION,
        family: &cs.family,
        params: &cs.params,
        d: g.d(),
        n: g.n(),
        options: opts,
    };
    // serde_json maps are ordered, so the text is canonical
    let text = serde_json::to_string(&key).expect("cache keys serialize");
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    (text, digest)
}

pub struct CellCache {
    root: PathBuf,
}

impl CellCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CellCache { root: root.into() }
    }

    fn entry(&self, digest: &str) -> PathBuf {
        self.root.join("cells").join(digest)
    }

    /// The cached solution iff the key and format match; anything unreadable
    /// is a miss with a warning.
    pub fn lookup(&self, cs: &CoefficientSet, g: &TorusGrid, opts: &CellOptions) -> Option<CellSolution> {
        let (text, digest) = cell_key(cs, g, opts);
        let dir = self.entry(&digest);
        if !dir.exists() {
            return None;
        }
        match std::fs::read_to_string(dir.join(KEY_FILE)) {
            Ok(stored) if stored == text => {}
            Ok(_) => {
                log::warn!("cache entry {} has a different key; ignoring it", dir.display());
                return None;
            }
            Err(e) => {
                log::warn!("cache entry {} is unreadable ({e}); ignoring it", dir.display());
                return None;
            }
        }
        match CellSolution::load(&dir) {
            Ok(cell) => Some(cell),
            Err(e) => {
                log::warn!("cache entry {} is corrupt ({e}); ignoring it", dir.display());
                None
            }
        }
    }

    pub fn store(&self, cs: &CoefficientSet, g: &TorusGrid, opts: &CellOptions, cell: &CellSolution) -> anyhow::Result<()> {
        let (text, digest) = cell_key(cs, g, opts);
        let dir = self.entry(&digest);
        let tmp = self.root.join("cells").join(format!(".{digest}.{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        cell.save(&tmp)?;
        std::fs::write(tmp.join(KEY_FILE), text)?;
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        if let Err(e) = std::fs::rename(&tmp, &dir) {
            // a concurrent run may have stored the same entry first
            log::debug!("cache store raced: {e}");
            let _ = std::fs::remove_dir_all(&tmp);
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

/// Solve the cell problem, going through the cache unless `policy` is off.
pub fn cached_cell(
    cache: Option<&CellCache>,
    refresh: bool,
    cs: &CoefficientSet,
    g: &TorusGrid,
    opts: &CellOptions,
) -> anyhow::Result<(CellSolution, CacheStatus)> {
    let Some(cache) = cache else {
        return Ok((solve_cell(cs, g, opts)?, CacheStatus::Off));
    };
    if !refresh {
        if let Some(cell) = cache.lookup(cs, g, opts) {
            log::info!("cell solution for `{}` (n = {}) taken from the cache", cs.family, g.n());
            return Ok((cell, CacheStatus::Hit));
        }
    }
    let cell = solve_cell(cs, g, opts)?;
    if let Err(e) = cache.store(cs, g, opts, &cell) {
        log::warn!("could not store the cell solution in {}: {e}", cache.root().display());
    }
    Ok((cell, CacheStatus::Miss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use defecthom::coefficients::build_family;
    use serde_json::json;

    #[test]
    fn cold_hit_and_grid_change() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = CellCache::new(tmp.path());
        let cs = build_family("sin-drift-1d", &json!({})).unwrap();
        let opts = CellOptions::default();
        let g = TorusGrid::new(1, 32).unwrap();
        let (a, s1) = cached_cell(Some(&cache), false, &cs, &g, &opts).unwrap();
        assert_eq!(s1, CacheStatus::Miss);
        let (b, s2) = cached_cell(Some(&cache), false, &cs, &g, &opts).unwrap();
        assert_eq!(s2, CacheStatus::Hit);
        assert_eq!(a.a_star, b.a_star);
        let g2 = TorusGrid::new(1, 64).unwrap();
        assert!(cache.lookup(&cs, &g2, &opts).is_none());
    }

    #[test]
    fn corrupt_entries_are_misses() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = CellCache::new(tmp.path());
        let cs = build_family("identity", &json!({"d": 1})).unwrap();
        let opts = CellOptions::default();
        let g = TorusGrid::new(1, 16).unwrap();
        cached_cell(Some(&cache), false, &cs, &g, &opts).unwrap();
        let (_, digest) = cell_key(&cs, &g, &opts);
        std::fs::write(tmp.path().join("cells").join(&digest).join("m_per.dhf"), b"garbage").unwrap();
        assert!(cache.lookup(&cs, &g, &opts).is_none());
    }
}
