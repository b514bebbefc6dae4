//! On-disk session artifacts.
//!
//! A run directory holds `session.json` (the metrics record, run settings
//! and summary), `events.jsonl` (one supervisor event per line) and,
//! optionally, `frames.bin` (every encoded link frame).

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teleop_core::autonomy::{replay, AutonomySnapshot, EventLogEntry, ReplayError};
use teleop_core::link::{Direction, FrameLogEntry, SessionArtifacts, SessionSummary};
use teleop_core::metrics::SessionRecord;
use thiserror::Error;
use walkdir::WalkDir;

pub const SESSION_FILE: &str = "session.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const FRAMES_FILE: &str = "frames.bin";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: line {line}: {reason}")]
    Line { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: line {line}: {source}")]
    Replay { path: PathBuf, line: usize, source: ReplayError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.into(), source }
}

/// Settings a run was started with, kept beside its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub scenario: String,
    pub operator: String,
    pub seed: u64,
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub drop_prob: f64,
    pub noise_std: f64,
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    #[serde(flatten)]
    pub record: SessionRecord,
    pub run: RunInfo,
    pub summary: SessionSummary,
}

/// Serialized forms of one run, byte-for-byte what [`write_run`] stores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunBytes {
    pub session: Vec<u8>,
    pub events: Vec<u8>,
    pub frames: Option<Vec<u8>>,
}

pub fn session_json(file: &SessionFile) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(file).expect("session values serialize");
    out.push(b'\n');
    out
}

pub fn events_jsonl(events: &[EventLogEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in events {
        serde_json::to_writer(&mut out, e).expect("events serialize");
        out.push(b'\n');
    }
    out
}

/// Frame log records: `t_us` (u64 LE), direction (0 master→slave,
/// 1 slave→master), length (u32 LE), frame bytes.
pub fn frames_bin(frames: &[FrameLogEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        out.extend_from_slice(&f.t_us.to_le_bytes());
        out.push(match f.direction {
            Direction::MasterToSlave => 0,
            Direction::SlaveToMaster => 1,
        });
        out.extend_from_slice(&(f.bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&f.bytes);
    }
    out
}

pub fn parse_frames(bytes: &[u8], path: &Path) -> Result<Vec<FrameLogEntry>, ArtifactError> {
    let bad = |reason: String| ArtifactError::Format { path: path.into(), reason };
    let mut out = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        if bytes.len() - at < 13 {
            return Err(bad(format!("truncated record header at byte {at}")));
        }
        let t_us = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let direction = match bytes[at + 8] {
            0 => Direction::MasterToSlave,
            1 => Direction::SlaveToMaster,
            d => return Err(bad(format!("unknown direction {d} at byte {}", at + 8))),
        };
        let len = u32::from_le_bytes(bytes[at + 9..at + 13].try_into().expect("4 bytes")) as usize;
        at += 13;
        if bytes.len() - at < len {
            return Err(bad(format!("truncated frame at byte {at}")));
        }
        out.push(FrameLogEntry { t_us, direction, bytes: bytes[at..at + len].to_vec() });
        at += len;
    }
    Ok(out)
}

pub fn run_bytes(artifacts: &SessionArtifacts, run: RunInfo, with_frames: bool) -> RunBytes {
    let file = SessionFile { record: artifacts.record.clone(), run, summary: artifacts.summary.clone() };
    RunBytes {
        session: session_json(&file),
        events: events_jsonl(&artifacts.events),
        frames: with_frames.then(|| frames_bin(&artifacts.frames)),
    }
}

/// Writes a run's artifacts into `dir`, creating it if needed.
pub fn write_run(dir: &Path, bytes: &RunBytes) -> Result<(), ArtifactError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let put = |name: &str, data: &[u8]| {
        let path = dir.join(name);
        fs::File::create(&path).and_then(|mut f| f.write_all(data)).map_err(io_err(&path))
    };
    put(SESSION_FILE, &bytes.session)?;
    put(EVENTS_FILE, &bytes.events)?;
    if let Some(frames) = &bytes.frames {
        put(FRAMES_FILE, frames)?;
    }
    Ok(())
}

pub fn read_session(path: &Path) -> Result<SessionFile, ArtifactError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ArtifactError::Line { path: path.into(), line: e.line(), reason: e.to_string() })
}

fn is_session_file(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n == SESSION_FILE || n.ends_with(".session.json"))
}

/// Every session record under `dir`, recursively, in path order. Files named
/// `session.json` or `*.session.json` are read; only their metrics fields
/// are required.
pub fn collect_records(dir: &Path) -> Result<Vec<(PathBuf, SessionRecord)>, ArtifactError> {
    let mut paths = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| ArtifactError::Format { path: dir.into(), reason: e.to_string() })?;
        if entry.file_type().is_file() && is_session_file(entry.path()) {
            paths.push(entry.into_path());
        }
    }
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let record: SessionRecord = serde_json::from_str(&text)
                .map_err(|e| ArtifactError::Line { path: path.clone(), line: e.line(), reason: e.to_string() })?;
            Ok((path, record))
        })
        .collect()
}

/// Parses an event log. A line that does not parse, including a final line
/// cut short, is reported with its 1-based number.
pub fn read_events(path: &Path) -> Result<Vec<EventLogEntry>, ArtifactError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| ArtifactError::Line { path: path.into(), line: line_no, reason: e.to_string() })?;
        out.push(entry);
    }
    Ok(out)
}

/// Re-runs an event log through the supervisor and checks every recorded
/// state. Accepts a run directory or the log itself.
pub fn replay_file(path: &Path) -> Result<Vec<(EventLogEntry, AutonomySnapshot)>, ArtifactError> {
    let file = if path.is_dir() { path.join(EVENTS_FILE) } else { path.to_path_buf() };
    let entries = read_events(&file)?;
    let snapshots = replay(&entries).map_err(|source| {
        let ReplayError::Diverged { index, .. } = source;
        ArtifactError::Replay { path: file.clone(), line: index + 1, source }
    })?;
    Ok(entries.into_iter().zip(snapshots).collect())
}
