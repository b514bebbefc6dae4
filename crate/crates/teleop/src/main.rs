use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use teleop::artifacts::{collect_records, replay_file};
use teleop::masks::{analyze_dir, read_calibration};
use teleop::report::{build_tables, parse_compare, render, Format};
use teleop::runner::{self, ModeArg, OperatorKind, RunOptions};
use teleop::scenario::write_scenario;
use teleop_core::perception::Calibration;
use teleop_core::pilot::DEFAULT_NOISE_STD;
use teleop_core::workcell::default_scenario;

/// Desk-scale teleoperated battery disassembly simulator.
#[derive(Parser)]
#[command(name = "teleop", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one session and write its artifacts.
    Run(RunArgs),
    /// Aggregate session records into performance tables.
    Analyze {
        /// Directory searched recursively for session.json / *.session.json.
        #[arg(long)]
        sessions: PathBuf,
        /// Baseline and compared mode, e.g. mode1:mode2.
        #[arg(long)]
        compare: Option<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run an event log through the supervisor and print each state.
    Replay {
        /// events.jsonl or a run directory.
        path: PathBuf,
    },
    /// Mask directory tools.
    Masks {
        #[command(subcommand)]
        command: MasksCmd,
    },
    /// Scenario file tools.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCmd,
    },
}

#[derive(Subcommand)]
enum MasksCmd {
    /// Describe every mask listed in masks.idx.
    Analyze {
        #[arg(long)]
        dir: PathBuf,
        /// Calibration (TOML or JSON with an `affine` 2x3 matrix); identity when absent.
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Output JSON file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Write the bundled scenario (TOML, masks and masks.idx) to a directory.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file or directory; the bundled scenario when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "manual")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "scripted")]
    operator: OperatorKind,
    /// One-way link delay.
    #[arg(long, default_value_t = 0.0)]
    latency_ms: f64,
    /// Extra per-frame delay drawn from [0, jitter].
    #[arg(long, default_value_t = 0.0)]
    jitter_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    drop_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated seconds to run; until all objects are sorted when absent.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Output directory for session.json, events.jsonl and frames.bin.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 if a scripted run ends in a fault.
    #[arg(long)]
    strict: bool,
    /// Interface label stored in the session record.
    #[arg(long, default_value = "IM1")]
    im_label: String,
    /// Scripted operator velocity noise, rad/s.
    #[arg(long, default_value_t = DEFAULT_NOISE_STD)]
    noise_std: f64,
    /// Also write frames.bin.
    #[arg(long)]
    frames: bool,
    /// Telemetry listen address (console runs default to 127.0.0.1:7421).
    #[arg(long)]
    telemetry: Option<String>,
}

fn emit(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let opts = RunOptions {
        scenario: args.scenario,
        mode: args.mode.into(),
        operator: args.operator,
        latency_ms: args.latency_ms,
        jitter_ms: args.jitter_ms,
        drop_prob: args.drop_prob,
        seed: args.seed,
        duration_s: args.duration_s,
        out: args.out,
        im_label: args.im_label,
        noise_std: args.noise_std,
        frames: args.frames,
        telemetry: args.telemetry,
    };
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)).context("installing interrupt handler")?;
    let outcome = runner::run(&opts, Some(stop))?;
    let s = &outcome.artifacts.summary;
    let r = &outcome.artifacts.record;
    println!(
        "mode={} completed={} sorted={}/{} time={:.1}s violations={} final_state={}{}",
        opts.mode.name(),
        s.completed,
        s.sorted,
        s.objects,
        s.duration_s,
        r.violations,
        s.final_state,
        if outcome.interrupted { " (interrupted)" } else { "" }
    );
    if args.strict && opts.operator == OperatorKind::Scripted && outcome.fault_terminated {
        eprintln!("run ended in {}", s.final_state);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main_inner() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Cmd::Run(args) => run(args),
        Cmd::Analyze { sessions, compare, format, out } => {
            let modes = compare.as_deref().map(parse_compare).transpose().map_err(anyhow::Error::msg)?;
            let records: Vec<_> = collect_records(&sessions)?.into_iter().map(|(_, r)| r).collect();
            if records.is_empty() {
                anyhow::bail!("no session records under {}", sessions.display());
            }
            emit(out.as_ref(), &render(&build_tables(&records, modes)?, format))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { path } => {
            let mut stdout = std::io::stdout().lock();
            for (entry, snap) in replay_file(&path)? {
                let line = serde_json::json!({
                    "t_us": entry.t_us,
                    "event": entry.event.name(),
                    "accepted": entry.accepted,
                    "state": snap.state,
                    "mode": snap.mode,
                    "violations": snap.violation_count,
                    "plan_remaining": snap.active_plan.as_ref().map(|p| p.remaining()),
                });
                writeln!(stdout, "{line}")?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Masks { command: MasksCmd::Analyze { dir, calib, out } } => {
            let calib = match calib {
                Some(p) => read_calibration(&p)?,
                None => Calibration::identity(),
            };
            let descriptors = analyze_dir(&dir, calib)?;
            let mut text = serde_json::to_string_pretty(&descriptors)?;
            text.push('\n');
            emit(out.as_ref(), &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Scenario { command: ScenarioCmd::Export { out } } => {
            let file = write_scenario(&default_scenario(), &out)?;
            println!("{}", file.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
