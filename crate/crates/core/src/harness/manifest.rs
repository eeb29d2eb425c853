use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::error::Result;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_text: String,
    config: &'a ExperimentConfig,
    /// Path relative to the output directory -> SHA-256 hex digest.
    artifacts: BTreeMap<String, String>,
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(&path, root, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        if rel == "manifest.json" {
            continue;
        }
        let digest = Sha256::digest(fs::read(&path)?);
        out.insert(rel, hex::encode(digest));
    }
    Ok(())
}

/// Writes `manifest.json` into `cfg.out`: the config echo and a hash of every
/// other file in the directory.
pub fn write_manifest(command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    let mut artifacts = BTreeMap::new();
    collect(&cfg.out, &cfg.out, &mut artifacts)?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_text: cfg.to_text(),
        config: cfg,
        artifacts,
    };
    let path = cfg.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}
