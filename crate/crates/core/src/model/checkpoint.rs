//! Checkpoints: `<stem>.layout` (text) plus `<stem>.weights` (flat
//! little-endian float64), which round-trips parameters bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{Architecture, Classifier, ParameterVector};
use crate::error::{Error, Result};

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("layout"), stem.with_extension("weights"))
}

pub fn save(clf: &Classifier, stem: &Path) -> Result<()> {
    let (layout_path, weights_path) = paths(stem);
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&layout_path, clf.params().layout().render()).map_err(|e| Error::io(&layout_path, e))?;
    let bytes: Vec<u8> = clf.params().values().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&weights_path, bytes).map_err(|e| Error::io(&weights_path, e))
}

pub fn load(stem: &Path) -> Result<Classifier> {
    let (layout_path, weights_path) = paths(stem);
    let text = fs::read_to_string(&layout_path).map_err(|e| Error::io(&layout_path, e))?;
    let descriptor = text
        .lines()
        .find_map(|l| l.strip_prefix("arch:"))
        .ok_or_else(|| Error::format(&layout_path, "missing `arch:` line"))?;
    let arch = Arc::new(Architecture::parse_descriptor(descriptor.trim())?);
    if arch.layout().render() != text {
        return Err(Error::format(&layout_path, "segment table does not match architecture"));
    }
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if bytes.len() != arch.num_params() * 8 {
        return Err(Error::format(
            &weights_path,
            format!("{} bytes for {} parameters", bytes.len(), arch.num_params()),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    let params = ParameterVector::from_values(arch.layout().clone(), values)?;
    Classifier::new(arch, params)
}
