//! Binary checkpoint format: a text header of `key=value` lines starting
//! with `icl-lab-checkpoint v1` and closed by `end`, followed by the
//! parameters as little-endian `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Arch, SequenceModel};
use crate::error::{LabError, Result};

const MAGIC: &str = "icl-lab-checkpoint v1";

/// Writes `model` with free-form `meta` entries (e.g. the training step).
pub fn write_checkpoint(path: &Path, model: &SequenceModel, meta: &[(&str, String)]) -> Result<()> {
    let mut out = Vec::with_capacity(256 + 8 * model.params.len());
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "arch={}", serde_json::to_string(&model.arch)?)?;
    writeln!(out, "num_params={}", model.params.len())?;
    for (k, v) in meta {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(crate::error::invalid(format!("bad checkpoint meta entry {k:?}")));
        }
        writeln!(out, "{k}={v}")?;
    }
    writeln!(out, "end")?;
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint back; returns the model and every header entry.
pub fn read_checkpoint(path: &Path) -> Result<(SequenceModel, BTreeMap<String, String>)> {
    let fmt = |msg: &str| LabError::Format { path: path.to_path_buf(), msg: msg.to_string() };
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(fmt("missing checkpoint magic line"));
    }
    let mut header = BTreeMap::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(fmt("truncated header"));
        }
        let l = line.trim_end_matches('\n');
        if l == "end" {
            break;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| fmt("header line without '='"))?;
        header.insert(k.to_string(), v.to_string());
    }
    let arch: Arch = serde_json::from_str(header.get("arch").ok_or_else(|| fmt("no arch entry"))?)?;
    let n: usize = header
        .get("num_params")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fmt("bad num_params entry"))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * n {
        return Err(fmt(&format!("expected {} parameter bytes, found {}", 8 * n, bytes.len())));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((SequenceModel::new(arch, params)?, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionArch;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let arch = Arch::TinyAttention(AttentionArch::new(5, 8, 4, 2, 1));
        let m = SequenceModel::init(arch, 0.3, 11).unwrap();
        write_checkpoint(&path, &m, &[("step", "42".into())]).unwrap();
        let (back, meta) = read_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta["step"], "42");
    }

    #[test]
    fn truncated_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = SequenceModel::zeros(Arch::TabularBigram { vocab: 3 }).unwrap();
        write_checkpoint(&path, &m, &[]).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(LabError::Format { .. })));
    }
}
