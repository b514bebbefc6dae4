//! Scenario directories: a `scenario.toml` plus one mask grid per object,
//! resolved relative to the TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use teleop_core::perception::{format_index, IndexEntry, Mask, PerceptionError};
use teleop_core::workcell::{LoadedScenario, Scenario, WorkcellError};
use thiserror::Error;

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const INDEX_FILE: &str = "masks.idx";

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{path}: {source}")]
    Mask { path: PathBuf, source: PerceptionError },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: WorkcellError },
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
}

fn read(path: &Path) -> Result<String, ScenarioFileError> {
    fs::read_to_string(path).map_err(|source| ScenarioFileError::Io { path: path.into(), source })
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioFileError> {
    fs::write(path, text).map_err(|source| ScenarioFileError::Io { path: path.into(), source })
}

/// Parses scenario TOML. Unknown keys are errors that name the key and its
/// line.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, ScenarioFileError> {
    toml::from_str(text).map_err(|source| ScenarioFileError::Parse { path: path.into(), source })
}

/// Loads a scenario file, or `scenario.toml` inside a directory, with its masks.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioFileError> {
    let file = if path.is_dir() { path.join(SCENARIO_FILE) } else { path.to_path_buf() };
    let scenario = parse_scenario(&read(&file)?, &file)?;
    let base = file.parent().unwrap_or(Path::new("."));
    let masks = scenario
        .objects
        .iter()
        .map(|o| {
            let mask_path = base.join(&o.mask);
            Mask::parse_text(&read(&mask_path)?, o.pl).map_err(|source| ScenarioFileError::Mask { path: mask_path, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    LoadedScenario::new(scenario, masks).map_err(|source| ScenarioFileError::Invalid { path: file, source })
}

/// Writes `scenario.toml`, every mask and a `masks.idx` into `dir`.
pub fn write_scenario(loaded: &LoadedScenario, dir: &Path) -> Result<PathBuf, ScenarioFileError> {
    fs::create_dir_all(dir).map_err(|source| ScenarioFileError::Io { path: dir.into(), source })?;
    let mut index = Vec::new();
    for (spec, mask) in loaded.scenario.objects.iter().zip(&loaded.masks) {
        write(&dir.join(&spec.mask), &mask.to_text())?;
        index.push(IndexEntry { file: spec.mask.clone(), pl: spec.pl });
    }
    write(&dir.join(INDEX_FILE), &format_index(&index))?;
    let file = dir.join(SCENARIO_FILE);
    write(&file, &toml::to_string_pretty(&loaded.scenario)?)?;
    Ok(file)
}
