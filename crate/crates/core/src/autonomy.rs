//! Variable-autonomy state machine.
//!
//! `transition` is a pure function of `(snapshot, event)`. Joint-limit faults
//! halt motion; the only way back to an actuated state is
//! `Fault → Recovering → Idle`.

use alloc::string::String;
use core::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{self, ImpedanceGains};
use crate::dynamics::{self, ArmModel, DynamicsError, JointState, LimitReport};
use crate::planning::{DisassemblyPlan, Trajectory};

/// Speed under which an arm counts as settled, rad/s.
pub const SETTLED_SPEED: f64 = 1e-3;
/// Braking damping as a multiple of the impedance damping.
pub const BRAKE_DAMPING_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Manual,
    #[serde(rename = "semi", alias = "semi_auto")]
    SemiAuto,
}

impl Mode {
    /// Numeric label used in session records: 1 = manual, 2 = semi-autonomous.
    pub fn number(self) -> u8 {
        match self {
            Mode::Manual => 1,
            Mode::SemiAuto => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Manual => "manual",
            Mode::SemiAuto => "semi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Idle,
    ManualTeleop,
    Planning,
    AutoApproach,
    Handover,
    Fault,
    Recovering,
}

impl FsmState {
    pub const ALL: [FsmState; 7] = [
        FsmState::Idle,
        FsmState::ManualTeleop,
        FsmState::Planning,
        FsmState::AutoApproach,
        FsmState::Handover,
        FsmState::Fault,
        FsmState::Recovering,
    ];

    /// States in which an arm is actuated by an operator or a trajectory.
    pub fn is_motion(self) -> bool {
        matches!(self, FsmState::ManualTeleop | FsmState::AutoApproach | FsmState::Handover)
    }

    pub fn name(self) -> &'static str {
        match self {
            FsmState::Idle => "idle",
            FsmState::ManualTeleop => "manual_teleop",
            FsmState::Planning => "planning",
            FsmState::AutoApproach => "auto_approach",
            FsmState::Handover => "handover",
            FsmState::Fault => "fault",
            FsmState::Recovering => "recovering",
        }
    }
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FsmEvent {
    /// Installs the disassembly plan produced by perception.
    LoadPlan { plan: DisassemblyPlan },
    SetMode { mode: Mode },
    ExecutePlan,
    PlanReady { trajectory: Trajectory },
    PlanFailed,
    ApproachDone,
    LimitViolation { report: LimitReport },
    Recover,
    Settled,
    TaskDone,
}

impl FsmEvent {
    pub fn name(&self) -> &'static str {
        match self {
            FsmEvent::LoadPlan { .. } => "load_plan",
            FsmEvent::SetMode { .. } => "set_mode",
            FsmEvent::ExecutePlan => "execute_plan",
            FsmEvent::PlanReady { .. } => "plan_ready",
            FsmEvent::PlanFailed => "plan_failed",
            FsmEvent::ApproachDone => "approach_done",
            FsmEvent::LimitViolation { .. } => "limit_violation",
            FsmEvent::Recover => "recover",
            FsmEvent::Settled => "settled",
            FsmEvent::TaskDone => "task_done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutonomySnapshot {
    pub mode: Mode,
    pub state: FsmState,
    pub active_plan: Option<DisassemblyPlan>,
    /// Session-cumulative count of accepted limit violations.
    pub violation_count: u64,
}

impl Default for AutonomySnapshot {
    fn default() -> Self {
        Self { mode: Mode::Manual, state: FsmState::Idle, active_plan: None, violation_count: 0 }
    }
}

impl AutonomySnapshot {
    pub fn with_plan(mut self, plan: DisassemblyPlan) -> Self {
        self.active_plan = Some(plan);
        self
    }

    fn plan_has_remaining(&self) -> bool {
        self.active_plan.as_ref().is_some_and(|p| !p.is_done())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {event} rejected in state {state}: {reason}")]
pub struct Rejected {
    pub state: FsmState,
    pub event: &'static str,
    pub reason: String,
}

fn reject(snapshot: &AutonomySnapshot, event: &FsmEvent, reason: &str) -> Rejected {
    Rejected { state: snapshot.state, event: event.name(), reason: reason.into() }
}

/// Applies one event. Unlisted `(state, event)` pairs are rejected and leave
/// the caller's snapshot untouched.
pub fn transition(snapshot: &AutonomySnapshot, event: &FsmEvent) -> Result<AutonomySnapshot, Rejected> {
    use FsmEvent as E;
    use FsmState as S;

    let mut next = snapshot.clone();
    match (snapshot.state, event) {
        (S::Idle, E::LoadPlan { plan }) => next.active_plan = Some(plan.clone()),
        (S::Idle, E::SetMode { mode: Mode::Manual }) => {
            next.mode = Mode::Manual;
            next.state = S::ManualTeleop;
        }
        (S::Idle, E::SetMode { mode: Mode::SemiAuto }) => {
            next.mode = Mode::SemiAuto;
        }
        (S::Idle, E::ExecutePlan) => {
            if snapshot.mode != Mode::SemiAuto {
                return Err(reject(snapshot, event, "semi-autonomous mode is not armed"));
            }
            if !snapshot.plan_has_remaining() {
                return Err(reject(snapshot, event, "no remaining objects in the active plan"));
            }
            next.state = S::Planning;
        }
        (S::Planning, E::PlanReady { .. }) => next.state = S::AutoApproach,
        (S::Planning, E::PlanFailed) => next.state = S::Idle,
        (S::AutoApproach, E::ApproachDone) => next.state = S::Handover,
        (S::ManualTeleop | S::Handover, E::SetMode { mode: Mode::SemiAuto }) => {
            next.mode = Mode::SemiAuto;
            next.state = S::Idle;
        }
        (S::Handover, E::SetMode { mode: Mode::Manual }) => {
            next.mode = Mode::Manual;
            next.state = S::ManualTeleop;
        }
        (S::Handover, E::TaskDone) => {
            if let Some(plan) = next.active_plan.as_mut() {
                plan.advance();
            }
            next.state = if next.plan_has_remaining() { S::Planning } else { S::Idle };
        }
        (s, E::LimitViolation { .. }) if s.is_motion() => {
            next.state = S::Fault;
            next.violation_count += 1;
        }
        (S::Fault | S::Recovering, E::LimitViolation { .. }) => {
            return Err(reject(snapshot, event, "already halted; violation absorbed"));
        }
        (S::Fault, E::Recover) => next.state = S::Recovering,
        (S::Recovering, E::Settled) => next.state = S::Idle,
        (S::Fault, _) => return Err(reject(snapshot, event, "fault must be recovered first")),
        _ => return Err(reject(snapshot, event, "transition not defined")),
    }
    Ok(next)
}

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub t_us: u64,
    /// State after the event (unchanged when rejected).
    pub state: FsmState,
    pub event: FsmEvent,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log entry {index}: expected {expected_state} (accepted = {expected_accepted}), replay gave {got_state} (accepted = {got_accepted})")]
    Diverged {
        index: usize,
        expected_state: FsmState,
        expected_accepted: bool,
        got_state: FsmState,
        got_accepted: bool,
    },
}

/// Re-applies logged events from the default snapshot and returns the
/// snapshot after each entry. Fails at the first entry whose recorded state
/// or acceptance differs from the replay.
pub fn replay(entries: &[EventLogEntry]) -> Result<alloc::vec::Vec<AutonomySnapshot>, ReplayError> {
    let mut snapshot = AutonomySnapshot::default();
    let mut out = alloc::vec::Vec::with_capacity(entries.len());
    for (index, entry) in entries.iter().enumerate() {
        let (next, accepted) = match transition(&snapshot, &entry.event) {
            Ok(next) => (next, true),
            Err(_) => (snapshot.clone(), false),
        };
        if next.state != entry.state || accepted != entry.accepted {
            return Err(ReplayError::Diverged {
                index,
                expected_state: entry.state,
                expected_accepted: entry.accepted,
                got_state: next.state,
                got_accepted: accepted,
            });
        }
        snapshot = next;
        out.push(snapshot.clone());
    }
    Ok(out)
}

/// What the actuation layer does in a given state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActuationPolicy {
    /// Hold position with heavy damping plus gravity compensation.
    Brake { damping_factor: f64 },
    /// Run the active mode's controller unchanged.
    PassThrough,
}

pub fn safety_action(state: FsmState) -> ActuationPolicy {
    match state {
        FsmState::Fault => ActuationPolicy::Brake { damping_factor: BRAKE_DAMPING_FACTOR },
        _ => ActuationPolicy::PassThrough,
    }
}

/// Braking torque `clamp(−k·Kd·q̇ + g(q))`.
pub fn brake_torque(
    model: &ArmModel,
    gains: &ImpedanceGains,
    damping_factor: f64,
    state: &JointState,
) -> Result<DVector<f64>, DynamicsError> {
    let g = dynamics::gravity_torque(model, &state.q)?;
    let damping = gains.scaled_damping(damping_factor);
    if damping.len() != state.qd.len() {
        return Err(DynamicsError::DimensionMismatch { expected: damping.len(), got: state.qd.len() });
    }
    let tau = g - damping.component_mul(&state.qd);
    Ok(control::clamp_torque(model, &tau))
}

/// True when the arm is at rest and inside its position limits.
pub fn recovery_settled(model: &ArmModel, state: &JointState) -> bool {
    let slow = state.qd.iter().all(|v| v.abs() < SETTLED_SPEED);
    let inside = dynamics::check_limits(model, state).position_violations.is_empty();
    slow && inside
}
