//! Mask directories indexed by `masks.idx`, and calibration files.

use std::fs;
use std::path::{Path, PathBuf};

use teleop_core::perception::{analyze_all, parse_index, Calibration, Mask, ObjectDescriptor, PerceptionError, WorldMapping};
use thiserror::Error;

use crate::scenario::INDEX_FILE;

#[derive(Debug, Error)]
pub enum MaskDirError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Perception { path: PathBuf, source: PerceptionError },
    #[error("{path}: {reason}")]
    Calibration { path: PathBuf, reason: String },
}

fn read(path: &Path) -> Result<String, MaskDirError> {
    fs::read_to_string(path).map_err(|source| MaskDirError::Io { path: path.into(), source })
}

/// Reads every mask listed in `dir/masks.idx`, in index order.
pub fn read_mask_dir(dir: &Path) -> Result<Vec<Mask>, MaskDirError> {
    let index_path = dir.join(INDEX_FILE);
    let entries = parse_index(&read(&index_path)?)
        .map_err(|source| MaskDirError::Perception { path: index_path, source })?;
    entries
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            Mask::parse_text(&read(&path)?, e.pl).map_err(|source| MaskDirError::Perception { path, source })
        })
        .collect()
}

/// Reads a calibration from TOML (`affine = [[..], [..]]`) or, for a `.json`
/// extension, the same shape as JSON.
pub fn read_calibration(path: &Path) -> Result<Calibration, MaskDirError> {
    let text = read(path)?;
    let bad = |reason: String| MaskDirError::Calibration { path: path.into(), reason };
    let calib: Calibration = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    calib.validate().map_err(|e| bad(e.to_string()))?;
    Ok(calib)
}

/// Descriptors for every indexed mask, mapped through `calib`.
pub fn analyze_dir(dir: &Path, calib: Calibration) -> Result<Vec<ObjectDescriptor>, MaskDirError> {
    let masks = read_mask_dir(dir)?;
    analyze_all(&masks, WorldMapping::Calibrated(calib))
        .map_err(|source| MaskDirError::Perception { path: dir.join(INDEX_FILE), source })
}
