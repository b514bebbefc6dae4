//! One simulated session from command-line style options to artifacts.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::rc::Rc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use teleop_core::autonomy::{FsmState, Mode};
use teleop_core::link::{ChannelModel, OperatorSource, Session, SessionArtifacts, SessionConfig};
use teleop_core::pilot::{PilotConfig, ScriptedPilot, DEFAULT_NOISE_STD};
use teleop_core::workcell::{default_scenario, LoadedScenario};

use crate::artifacts::{run_bytes, write_run, RunBytes, RunInfo};
use crate::scenario::load_scenario;
use crate::telemetry::{state_line, ConsoleOperator, TelemetryServer};

/// Cap on simulated time when a run is left to finish on its own.
pub const DEFAULT_LIMIT_S: f64 = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OperatorKind {
    Scripted,
    Console,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Manual,
    Semi,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Manual => Mode::Manual,
            ModeArg::Semi => Mode::SemiAuto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Scenario file or directory; the bundled scenario when absent.
    pub scenario: Option<PathBuf>,
    pub mode: Mode,
    pub operator: OperatorKind,
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub drop_prob: f64,
    pub seed: u64,
    /// Simulated seconds; until complete (capped at [`DEFAULT_LIMIT_S`]) when absent.
    pub duration_s: Option<f64>,
    pub out: Option<PathBuf>,
    pub im_label: String,
    pub noise_std: f64,
    pub frames: bool,
    /// Telemetry listen address; console runs default to port 7421.
    pub telemetry: Option<String>,
}

impl RunOptions {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            scenario: None,
            mode,
            operator: OperatorKind::Scripted,
            latency_ms: 0.0,
            jitter_ms: 0.0,
            drop_prob: 0.0,
            seed,
            duration_s: None,
            out: None,
            im_label: "IM1".into(),
            noise_std: DEFAULT_NOISE_STD,
            frames: false,
            telemetry: None,
        }
    }

    pub fn channel(&self) -> ChannelModel {
        ChannelModel { delay_ms: self.latency_ms, jitter_ms: self.jitter_ms, drop_prob: self.drop_prob, seed: self.seed }
    }

    fn run_info(&self) -> RunInfo {
        RunInfo {
            scenario: self.scenario.as_ref().map_or_else(|| "default".into(), |p| p.display().to_string()),
            operator: match self.operator {
                OperatorKind::Scripted => "scripted".into(),
                OperatorKind::Console => "console".into(),
            },
            seed: self.seed,
            latency_ms: self.latency_ms,
            jitter_ms: self.jitter_ms,
            drop_prob: self.drop_prob,
            noise_std: self.noise_std,
            duration_s: self.duration_s,
        }
    }
}

pub struct RunOutcome {
    pub artifacts: SessionArtifacts,
    pub bytes: RunBytes,
    /// The run ended halted in Fault or Recovering.
    pub fault_terminated: bool,
    pub interrupted: bool,
}

pub fn load(opts: &RunOptions) -> anyhow::Result<LoadedScenario> {
    Ok(match &opts.scenario {
        Some(path) => load_scenario(path)?,
        None => default_scenario(),
    })
}

/// Runs one session and writes its artifacts to `opts.out` if set. `stop`
/// ends the run early with everything recorded so far.
pub fn run(opts: &RunOptions, stop: Option<Arc<AtomicBool>>) -> anyhow::Result<RunOutcome> {
    if !opts.channel().is_valid() {
        anyhow::bail!("latency and jitter must be >= 0 and drop-prob in [0, 1)");
    }
    let loaded = load(opts)?;
    let rate = loaded.scenario.rates.control_rate;
    let limit_s = opts.duration_s.unwrap_or(DEFAULT_LIMIT_S);
    if !(limit_s.is_finite() && limit_s > 0.0) {
        anyhow::bail!("duration-s must be > 0");
    }
    let mut config = SessionConfig::new(opts.mode, (limit_s * rate).round() as u64);
    config.im_label = opts.im_label.clone();
    config.channel = opts.channel();
    config.record_frames = opts.frames;
    config.stop_when_complete = opts.duration_s.is_none();

    let address = match (&opts.telemetry, opts.operator) {
        (Some(a), _) => Some(a.clone()),
        (None, OperatorKind::Console) => Some(format!("127.0.0.1:{}", crate::telemetry::DEFAULT_PORT)),
        (None, OperatorKind::Scripted) => None,
    };
    let server = match address {
        Some(a) => {
            let s = TelemetryServer::bind(&a).map_err(|e| anyhow::anyhow!("telemetry bind {a}: {e}"))?;
            eprintln!("telemetry listening on {}", s.local_addr());
            Some(Rc::new(s))
        }
        None => None,
    };
    let mut operator: Box<dyn OperatorSource> = match opts.operator {
        OperatorKind::Scripted => Box::new(ScriptedPilot::new(PilotConfig::new(opts.mode, opts.seed, opts.noise_std))),
        OperatorKind::Console => Box::new(ConsoleOperator::new(Rc::clone(server.as_ref().expect("console has a server")))),
    };
    let decimation = ((rate / loaded.scenario.rates.telemetry_rate).round() as u64).max(1);
    let realtime = opts.operator == OperatorKind::Console;

    let mut session = Session::new(&loaded, config)?;
    let started = Instant::now();
    let mut interrupted = false;
    while !session.finished() {
        if stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
            interrupted = true;
            break;
        }
        session.step(operator.as_mut())?;
        if let Some(server) = &server {
            if session.tick() % decimation == 0 {
                server.broadcast(&state_line(&session.telemetry_state()));
            }
        }
        if realtime {
            let ahead = Duration::from_micros(session.t_us()).saturating_sub(started.elapsed());
            if ahead > Duration::from_millis(2) {
                std::thread::sleep(ahead);
            }
        }
    }
    if let Some(server) = &server {
        server.broadcast(&state_line(&session.telemetry_state()));
    }
    let artifacts = session.finish();
    let bytes = run_bytes(&artifacts, opts.run_info(), opts.frames);
    if let Some(out) = &opts.out {
        write_run(out, &bytes)?;
    }
    let fault_terminated = matches!(artifacts.summary.final_state, FsmState::Fault | FsmState::Recovering);
    Ok(RunOutcome { artifacts, bytes, fault_terminated, interrupted })
}
