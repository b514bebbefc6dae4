//! Host-side companion to `teleop-core`: scenario and mask files, session
//! artifacts, reports, the telemetry endpoint and the run orchestration
//! behind the `teleop` binary.

pub mod artifacts;
pub mod masks;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod telemetry;
