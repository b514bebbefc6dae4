//! Master and slave node loops on one logical clock.
//!
//! Each tick both nodes publish a joint-state frame, the channels deliver
//! whatever is due, the operator acts, and both arms advance one RK4 step.
//! The slave follows the most recently delivered master state (zero-order
//! hold) and the master renders the slave's external torque.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::format;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::channel::{Channel, ChannelModel, ChannelStats};
use super::frame::{decode, encode, Frame, FrameKind};
use crate::autonomy::{
    self, ActuationPolicy, AutonomySnapshot, EventLogEntry, FsmEvent, FsmState, Mode, Rejected,
};
use crate::control::{self, ImpedanceGains, MotionLimits};
use crate::dynamics::{self, ArmModel, JointState};
use crate::metrics::{SessionRecord, TaskTimes};
use crate::perception::ObjectDescriptor;
use crate::planning::{self, PlannerConfig, Trajectory};
use crate::workcell::{
    self, GraspOutcome, LoadedScenario, ObjectKind, ObjectPhase, ReleaseOutcome, Scenario, Workcell, WorkcellError,
};

/// A node flags its link stale after this many ticks without a peer frame.
pub const STALE_TICKS: u64 = 10;
/// Seed offset for the slave → master direction.
const REVERSE_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
/// Largest lead of the hand reference over the master arm, rad.
const HAND_SLACK: f64 = 2.0;
/// Number of console view presets cycled by the camera command.
pub const CAMERA_PRESETS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Workcell(#[from] WorkcellError),
    #[error("simulation failed: {0}")]
    Simulation(String),
}

/// Commands from an operator, console or script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetMode { mode: Mode },
    Execute,
    /// Per-joint master velocity in `[-1, 1]`, scaled by `qd_max · speed_scale`.
    Jog { velocity: Vec<f64> },
    SetSpeed { scale: f64 },
    /// Maximum grip force, N. The gripper closes at this force.
    SetForce { force: f64 },
    Recover,
    Camera {
        #[serde(default = "one")]
        delta: i32,
    },
    Grip { close: bool },
}

fn one() -> i32 {
    1
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error(transparent)]
    Rejected(#[from] Rejected),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Workcell(#[from] WorkcellError),
}

/// What a command did, for the operator's benefit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CommandAck {
    Ok,
    Grasp(GraspOutcome),
    Release(ReleaseOutcome),
}

/// Everything an operator may look at before acting on a tick.
pub struct Observation<'a> {
    pub tick: u64,
    pub t: f64,
    pub scenario: &'a Scenario,
    pub fsm: &'a AutonomySnapshot,
    pub master: &'a JointState,
    /// Slave state as last delivered to the master side.
    pub slave_seen: Option<&'a JointState>,
    pub workcell: &'a Workcell,
    pub limits: &'a MotionLimits,
    pub descriptors: &'a [ObjectDescriptor],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperatorInput {
    /// Master hand velocity, rad/s. `None` keeps the last jog command.
    pub velocity: Option<DVector<f64>>,
    pub commands: Vec<Command>,
}

/// A source of operator actions, queried once per control tick.
pub trait OperatorSource {
    fn act(&mut self, obs: &Observation<'_>) -> OperatorInput;

    /// Results of the commands returned by the last `act`, in order.
    fn feedback(&mut self, _results: &[Result<CommandAck, CommandError>]) {}
}

/// An operator that never touches anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdleOperator;

impl OperatorSource for IdleOperator {
    fn act(&mut self, _obs: &Observation<'_>) -> OperatorInput {
        OperatorInput { velocity: None, commands: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Recorded in the session record; the operator chooses the actual mode.
    pub mode: Mode,
    pub im_label: String,
    pub channel: ChannelModel,
    pub max_ticks: u64,
    pub stop_when_complete: bool,
    /// Keep a telemetry state every this many ticks (`None`: keep none).
    pub telemetry_decimation: Option<u64>,
    pub record_frames: bool,
}

impl SessionConfig {
    pub fn new(mode: Mode, max_ticks: u64) -> Self {
        Self {
            mode,
            im_label: "IM1".into(),
            channel: ChannelModel::default(),
            max_ticks,
            stop_when_complete: true,
            telemetry_decimation: None,
            record_frames: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    MasterToSlave,
    SlaveToMaster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLogEntry {
    pub t_us: u64,
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectStatusView {
    pub id: u32,
    pub kind: ObjectKind,
    pub phase: ObjectPhase,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timers {
    pub elapsed_s: f64,
    pub per_task_s: TaskTimes,
}

/// One outbound telemetry sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryState {
    pub t_us: u64,
    pub master_q: Vec<f64>,
    pub slave_q: Vec<f64>,
    pub ee_xy: [f64; 2],
    pub link_lengths: Vec<f64>,
    pub mode: Mode,
    pub fsm: FsmState,
    pub violations: u64,
    pub task_status: Vec<ObjectStatusView>,
    pub timers: Timers,
    pub holding: Option<u32>,
    pub force_setpoint: f64,
    pub max_grip_force: f64,
    pub speed_scale: f64,
    pub camera: u32,
    pub link_stale: bool,
    pub plan_remaining: usize,
}

/// Outcome of one planning attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewRecord {
    pub t_us: u64,
    pub target: [f64; 2],
    pub waypoints: usize,
    /// Waypoints flagged by the preview; `None` when no trajectory was produced.
    pub violations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub ticks: u64,
    pub duration_s: f64,
    pub completed: bool,
    pub final_state: FsmState,
    pub sorted: usize,
    pub objects: usize,
    pub master_to_slave: ChannelStats,
    pub slave_to_master: ChannelStats,
    pub decode_errors: u64,
    /// CRC-32 over every frame sent, per direction.
    pub frame_digest: [u32; 2],
    pub previews: Vec<PreviewRecord>,
    /// Limit violations accepted while a planned trajectory was executing.
    pub auto_approach_violations: u64,
    pub diagnostics: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionArtifacts {
    pub record: SessionRecord,
    pub summary: SessionSummary,
    pub events: Vec<EventLogEntry>,
    pub telemetry: Vec<TelemetryState>,
    pub frames: Vec<FrameLogEntry>,
}

struct ActiveTrajectory {
    trajectory: Trajectory,
    start_tick: u64,
}

/// The coupled master/slave simulation with its workcell and supervisor.
pub struct Session {
    scenario: Scenario,
    config: SessionConfig,
    master_model: ArmModel,
    slave_model: ArmModel,
    gains: ImpedanceGains,
    hand_damping: DVector<f64>,
    hand_stiffness: DVector<f64>,
    /// Where the operator's hand means the master to be.
    hand_ref: DVector<f64>,
    limits: MotionLimits,
    planner: PlannerConfig,
    home: DVector<f64>,
    dt: f64,
    dt_us: u64,
    tick: u64,

    master: JointState,
    slave: JointState,
    to_slave: Channel<Vec<u8>>,
    to_master: Channel<Vec<u8>>,
    master_seq: u32,
    slave_seq: u32,
    leader_seen: Option<JointState>,
    follower_seen: Option<JointState>,
    master_last_rx: u64,
    slave_last_rx: u64,
    decode_errors: u64,
    digests: [crc32fast::Hasher; 2],

    fsm: AutonomySnapshot,
    workcell: Workcell,
    descriptors: Vec<ObjectDescriptor>,
    active: Option<ActiveTrajectory>,
    hand_velocity: DVector<f64>,
    camera: u32,

    events: Vec<EventLogEntry>,
    telemetry: Vec<TelemetryState>,
    frames: Vec<FrameLogEntry>,
    previews: Vec<PreviewRecord>,
    auto_violations: u64,
    diagnostics: Vec<(u64, String)>,
}

fn sim_err(e: impl core::fmt::Display) -> SessionError {
    SessionError::Simulation(e.to_string())
}

impl Session {
    pub fn new(loaded: &LoadedScenario, config: SessionConfig) -> Result<Self, SessionError> {
        let scenario = loaded.scenario.clone();
        scenario.validate()?;
        if !config.channel.is_valid() {
            return Err(SessionError::Config("channel parameters out of range".into()));
        }
        if config.telemetry_decimation == Some(0) {
            return Err(SessionError::Config("telemetry decimation must be >= 1".into()));
        }
        let master_model = scenario.master().clone();
        let slave_model = scenario.arm.clone();
        let gains = scenario.gains()?;
        let home = scenario.home();
        let m_home = dynamics::mass_matrix(&master_model, &home).map_err(sim_err)?;
        // Critically damped hand impedance at the configured bandwidth.
        let bw = scenario.control.hand_bandwidth;
        let hand_damping = DVector::from_iterator(master_model.n, (0..master_model.n).map(|i| bw * m_home[(i, i)]));
        let hand_stiffness =
            DVector::from_iterator(master_model.n, (0..master_model.n).map(|i| 0.25 * bw * bw * m_home[(i, i)]));
        let dt = scenario.dt();
        let dt_us = libm::round(dt * 1e6) as u64;
        if dt_us == 0 {
            return Err(SessionError::Config("control_rate above 1 MHz".into()));
        }
        let workcell = Workcell::new(loaded)?;
        let descriptors = workcell.objects.iter().map(|o| o.descriptor).collect();
        let n = slave_model.n;
        let channel = config.channel;
        let mut session = Self {
            limits: scenario.control.limits,
            planner: PlannerConfig { period: dt, ..PlannerConfig::default() },
            master: JointState::at_rest(home.clone()),
            slave: JointState::at_rest(home.clone()),
            master_model,
            slave_model,
            gains,
            hand_damping,
            hand_stiffness,
            hand_ref: home.clone(),
            dt,
            dt_us,
            tick: 0,
            to_slave: Channel::new(channel),
            to_master: Channel::new(channel.with_seed(channel.seed ^ REVERSE_SEED_SALT)),
            master_seq: 0,
            slave_seq: 0,
            leader_seen: None,
            follower_seen: None,
            master_last_rx: 0,
            slave_last_rx: 0,
            decode_errors: 0,
            digests: [crc32fast::Hasher::new(), crc32fast::Hasher::new()],
            fsm: AutonomySnapshot::default(),
            workcell,
            descriptors,
            active: None,
            hand_velocity: DVector::zeros(n),
            camera: 0,
            events: Vec::new(),
            telemetry: Vec::new(),
            frames: Vec::new(),
            previews: Vec::new(),
            auto_violations: 0,
            diagnostics: Vec::new(),
            home,
            scenario,
            config,
        };
        let plan = planning::order_objects(&session.descriptors);
        // Accepted from the default snapshot by construction.
        let _ = session.apply_event(FsmEvent::LoadPlan { plan });
        Ok(session)
    }

    pub fn t_us(&self) -> u64 {
        self.tick * self.dt_us
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn fsm(&self) -> &AutonomySnapshot {
        &self.fsm
    }

    pub fn workcell(&self) -> &Workcell {
        &self.workcell
    }

    pub fn master(&self) -> &JointState {
        &self.master
    }

    pub fn slave(&self) -> &JointState {
        &self.slave
    }

    pub fn limits(&self) -> &MotionLimits {
        &self.limits
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn events(&self) -> &[EventLogEntry] {
        &self.events
    }

    /// True when the session should stop: out of ticks, or done and
    /// configured to stop on completion.
    pub fn finished(&self) -> bool {
        self.tick >= self.config.max_ticks || (self.config.stop_when_complete && self.workcell.is_complete())
    }

    pub fn link_stale(&self) -> bool {
        let now = self.tick;
        now.saturating_sub(self.master_last_rx) > STALE_TICKS || now.saturating_sub(self.slave_last_rx) > STALE_TICKS
    }

    fn apply_event(&mut self, event: FsmEvent) -> Result<(), Rejected> {
        let result = autonomy::transition(&self.fsm, &event);
        let accepted = result.is_ok();
        let outcome = match result {
            Ok(next) => {
                if self.fsm.state == FsmState::AutoApproach && next.state != FsmState::AutoApproach {
                    self.active = None;
                }
                self.fsm = next;
                Ok(())
            }
            Err(r) => Err(r),
        };
        self.events.push(EventLogEntry { t_us: self.t_us(), state: self.fsm.state, event, accepted });
        outcome
    }

    fn slave_ee(&self) -> [f64; 2] {
        let p = dynamics::forward_kinematics(&self.slave_model, &self.slave.q).unwrap_or_default();
        [p.x, p.y]
    }

    /// Applies one operator command between ticks.
    pub fn command(&mut self, cmd: Command) -> Result<CommandAck, CommandError> {
        let n = self.master_model.n;
        match cmd {
            Command::SetMode { mode } => self.apply_event(FsmEvent::SetMode { mode })?,
            Command::Execute => self.apply_event(FsmEvent::ExecutePlan)?,
            Command::Recover => self.apply_event(FsmEvent::Recover)?,
            Command::Jog { velocity } => {
                if velocity.len() != n {
                    return Err(CommandError::Invalid(format!("jog needs {n} joint velocities, got {}", velocity.len())));
                }
                if velocity.iter().any(|v| !v.is_finite()) {
                    return Err(CommandError::Invalid("jog velocity must be finite".into()));
                }
                self.hand_velocity = DVector::from_iterator(
                    n,
                    velocity
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v.clamp(-1.0, 1.0) * self.master_model.qd_max[i] * self.limits.speed_scale),
                );
            }
            Command::SetSpeed { scale } => {
                let next = MotionLimits { speed_scale: scale, ..self.limits };
                next.validate().map_err(|e| CommandError::Invalid(e.to_string()))?;
                self.limits = next;
            }
            Command::SetForce { force } => {
                let next = MotionLimits { max_grip_force: force, ..self.limits };
                next.validate().map_err(|e| CommandError::Invalid(e.to_string()))?;
                self.limits = next;
                self.workcell.set_force(force, force);
            }
            Command::Camera { delta } => {
                self.camera = (self.camera as i64 + delta as i64).rem_euclid(CAMERA_PRESETS as i64) as u32;
            }
            Command::Grip { close: true } => {
                let outcome = self.workcell.try_grasp(self.slave_ee(), self.t())?;
                if !matches!(outcome, GraspOutcome::Attached { .. }) {
                    self.diagnostics.push((self.t_us(), outcome.diagnostic()));
                }
                return Ok(CommandAck::Grasp(outcome));
            }
            Command::Grip { close: false } => {
                let outcome = self.workcell.release(self.slave_ee(), self.t())?;
                if matches!(outcome, ReleaseOutcome::Sorted { .. }) && self.fsm.state == FsmState::Handover {
                    let _ = self.apply_event(FsmEvent::TaskDone);
                }
                return Ok(CommandAck::Release(outcome));
            }
        }
        Ok(CommandAck::Ok)
    }

    fn t(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    fn send_frames(&mut self) -> Result<(), SessionError> {
        let t_us = self.t_us();
        let m = encode(&Frame::joint_state(self.master_seq, t_us, &self.master)).map_err(sim_err)?;
        let s = encode(&Frame::joint_state(self.slave_seq, t_us, &self.slave)).map_err(sim_err)?;
        self.master_seq = self.master_seq.wrapping_add(1);
        self.slave_seq = self.slave_seq.wrapping_add(1);
        self.digests[0].update(&m);
        self.digests[1].update(&s);
        if self.config.record_frames {
            self.frames.push(FrameLogEntry { t_us, direction: Direction::MasterToSlave, bytes: m.clone() });
            self.frames.push(FrameLogEntry { t_us, direction: Direction::SlaveToMaster, bytes: s.clone() });
        }
        self.to_slave.push(m, t_us);
        self.to_master.push(s, t_us);
        Ok(())
    }

    fn latest_state(&mut self, frames: Vec<Vec<u8>>) -> Option<JointState> {
        let mut latest = None;
        for bytes in frames {
            match decode(&bytes) {
                Ok(f) if f.kind == FrameKind::JointState && f.payload.len() == self.slave_model.n => {
                    latest = Some(f.to_joint_state());
                }
                Ok(_) => {}
                Err(_) => self.decode_errors += 1,
            }
        }
        latest
    }

    fn receive_frames(&mut self) {
        let t_us = self.t_us();
        let to_slave = self.to_slave.poll(t_us);
        if let Some(s) = self.latest_state(to_slave) {
            self.leader_seen = Some(s);
            self.slave_last_rx = self.tick;
        }
        let to_master = self.to_master.poll(t_us);
        if let Some(s) = self.latest_state(to_master) {
            self.follower_seen = Some(s);
            self.master_last_rx = self.tick;
        }
    }

    fn plan_next(&mut self) {
        let holding = self.workcell.gripper.holding;
        let target = match holding {
            Some(id) => Some(self.workcell.disposal.slot(id as usize)),
            None => self
                .fsm
                .active_plan
                .as_ref()
                .and_then(|p| p.current())
                .map(|d| planning::approach_target(d, &self.scenario.approach)),
        };
        let Some(target) = target else {
            let _ = self.apply_event(FsmEvent::PlanFailed);
            return;
        };
        let t_us = self.t_us();
        let planned = planning::solve_ik(&self.slave_model, target, &self.home).and_then(|goal| {
            planning::plan_trajectory(&self.master_model, &self.master.q, &goal, &self.limits, &self.planner)
        });
        match planned {
            Ok(trajectory) => {
                let report = planning::preview(&self.slave_model, &trajectory);
                self.previews.push(PreviewRecord {
                    t_us,
                    target,
                    waypoints: trajectory.len(),
                    violations: Some(report.violations.len()),
                    error: None,
                });
                if report.is_empty() {
                    self.active = Some(ActiveTrajectory { trajectory: trajectory.clone(), start_tick: self.tick });
                    let _ = self.apply_event(FsmEvent::PlanReady { trajectory });
                } else {
                    let _ = self.apply_event(FsmEvent::PlanFailed);
                }
            }
            Err(e) => {
                self.previews.push(PreviewRecord { t_us, target, waypoints: 0, violations: None, error: Some(e.to_string()) });
                let _ = self.apply_event(FsmEvent::PlanFailed);
            }
        }
    }

    fn master_torque(&self) -> Result<DVector<f64>, SessionError> {
        let model = &self.master_model;
        if let ActuationPolicy::Brake { damping_factor } = autonomy::safety_action(self.fsm.state) {
            return autonomy::brake_torque(model, &self.gains, damping_factor, &self.master).map_err(sim_err);
        }
        let n = model.n;
        let tau_ext = self.follower_seen.as_ref().map(|s| s.tau_ext.clone()).unwrap_or_else(|| DVector::zeros(n));
        let feedback = control::master_torque(&self.gains, &tau_ext, &self.master).map_err(sim_err)?.tau_l;
        let g = dynamics::gravity_torque(model, &self.master.q).map_err(sim_err)?;
        if let (Some(active), FsmState::AutoApproach) = (&self.active, self.fsm.state) {
            let k = (self.tick - active.start_tick) as usize;
            let reference = active.trajectory.reference(k);
            let mut tau = dynamics::coriolis_torque(model, &self.master.q, &self.master.qd).map_err(sim_err)? + g + feedback;
            for i in 0..n {
                tau[i] += self.gains.kp[i] * (reference.q[i] - self.master.q[i])
                    + self.gains.kd[i] * (reference.qd[i] - self.master.qd[i]);
            }
            return Ok(control::clamp_torque(model, &tau));
        }
        // The operator's hand is not subject to the actuator limits.
        let hand = self.hand_stiffness.component_mul(&(&self.hand_ref - &self.master.q))
            + self.hand_damping.component_mul(&(&self.hand_velocity - &self.master.qd));
        Ok(control::clamp_torque(model, &(g + feedback)) + hand)
    }

    /// Integrates the hand's intended position. Hands are off while braking
    /// or executing a trajectory; the reference then tracks the arm.
    fn advance_hand(&mut self) {
        let hands_on = !matches!(self.fsm.state, FsmState::Fault | FsmState::AutoApproach | FsmState::Planning);
        if !hands_on {
            self.hand_ref = self.master.q.clone();
            return;
        }
        let n = self.master_model.n;
        for i in 0..n {
            let r = self.hand_ref[i] + self.hand_velocity[i] * self.dt;
            // bounded so a blocked arm cannot wind the hand up without limit
            let q = self.master.q[i];
            self.hand_ref[i] = r.clamp(q - HAND_SLACK, q + HAND_SLACK);
        }
    }

    fn slave_torque(&self) -> Result<DVector<f64>, SessionError> {
        let model = &self.slave_model;
        if let ActuationPolicy::Brake { damping_factor } = autonomy::safety_action(self.fsm.state) {
            // The hold also carries any payload.
            let tau = autonomy::brake_torque(model, &self.gains, damping_factor, &self.slave).map_err(sim_err)?
                - &self.slave.tau_ext;
            return Ok(control::clamp_torque(model, &tau));
        }
        let leader = self.leader_seen.as_ref().unwrap_or(&self.slave);
        let frame = control::slave_torque(&self.gains, model, &self.slave, leader).map_err(sim_err)?;
        Ok(control::clamp_torque(model, &frame.tau_f))
    }

    fn after_step(&mut self) {
        let state = self.fsm.state;
        if state.is_motion() {
            let report = dynamics::check_limits(&self.slave_model, &self.slave);
            if !report.position_violations.is_empty() {
                let during_auto = state == FsmState::AutoApproach;
                if self.apply_event(FsmEvent::LimitViolation { report }).is_ok() && during_auto {
                    self.auto_violations += 1;
                }
            }
        }
        match self.fsm.state {
            FsmState::Recovering if autonomy::recovery_settled(&self.slave_model, &self.slave) => {
                let _ = self.apply_event(FsmEvent::Settled);
            }
            FsmState::AutoApproach => {
                let done = self
                    .active
                    .as_ref()
                    .is_some_and(|a| (self.tick + 1 - a.start_tick) as usize >= a.trajectory.len());
                if done {
                    let _ = self.apply_event(FsmEvent::ApproachDone);
                }
            }
            FsmState::Handover if self.workcell.gripper.holding.is_none() => {
                let current_sorted = self.fsm.active_plan.as_ref().and_then(|p| p.current()).is_some_and(|d| {
                    self.workcell
                        .objects
                        .iter()
                        .find(|o| o.descriptor == *d)
                        .is_some_and(|o| self.workcell.status.phase(o.spec.id) == Some(ObjectPhase::Sorted))
                });
                if current_sorted {
                    let _ = self.apply_event(FsmEvent::TaskDone);
                }
            }
            _ => {}
        }
    }

    /// Advances one control tick.
    pub fn step(&mut self, operator: &mut dyn OperatorSource) -> Result<(), SessionError> {
        self.send_frames()?;
        self.receive_frames();

        let input = {
            let obs = Observation {
                tick: self.tick,
                t: self.t(),
                scenario: &self.scenario,
                fsm: &self.fsm,
                master: &self.master,
                slave_seen: self.follower_seen.as_ref(),
                workcell: &self.workcell,
                limits: &self.limits,
                descriptors: &self.descriptors,
            };
            operator.act(&obs)
        };
        if let Some(v) = input.velocity {
            if v.len() != self.master_model.n {
                return Err(SessionError::Config("operator velocity has the wrong joint count".into()));
            }
            self.hand_velocity = v;
        }
        let results: Vec<_> = input.commands.into_iter().map(|c| self.command(c)).collect();
        operator.feedback(&results);

        if self.fsm.state == FsmState::Planning {
            self.plan_next();
        }

        self.advance_hand();
        self.slave.tau_ext =
            workcell::contact_torque(&self.slave_model, &self.slave.q, self.workcell.held_mass()).map_err(sim_err)?;
        let tau_m = self.master_torque()?;
        let tau_s = self.slave_torque()?;
        self.master = dynamics::step(&self.master_model, &self.master, &tau_m, self.dt).map_err(sim_err)?;
        self.slave = dynamics::step(&self.slave_model, &self.slave, &tau_s, self.dt).map_err(sim_err)?;

        self.after_step();
        self.tick += 1;
        if let Some(every) = self.config.telemetry_decimation {
            if self.tick.is_multiple_of(every) {
                let snapshot = self.telemetry_state();
                self.telemetry.push(snapshot);
            }
        }
        Ok(())
    }

    /// Per-group durations: each group runs from the end of the previous
    /// group (by priority) to the moment its last object was sorted, or to
    /// now if it is unfinished.
    pub fn task_times(&self) -> TaskTimes {
        let now = self.t();
        let mut groups: Vec<(u32, ObjectKind, Option<f64>)> = Vec::new();
        for kind in ObjectKind::ALL {
            let members: Vec<_> = self.workcell.objects.iter().filter(|o| o.spec.kind == kind).collect();
            let Some(min_pl) = members.iter().map(|o| o.spec.pl).min() else {
                continue;
            };
            let mut end: Option<f64> = Some(0.0);
            for o in &members {
                let sorted_at = (self.workcell.status.phase(o.spec.id) == Some(ObjectPhase::Sorted))
                    .then(|| {
                        self.workcell
                            .status
                            .changes
                            .iter()
                            .rev()
                            .find(|c| c.id == o.spec.id && c.phase == ObjectPhase::Sorted)
                            .map(|c| c.t)
                    })
                    .flatten();
                end = match (end, sorted_at) {
                    (Some(e), Some(s)) => Some(e.max(s)),
                    _ => None,
                };
            }
            groups.push((min_pl, kind, end));
        }
        groups.sort_by_key(|(pl, kind, _)| (*pl, *kind));
        let mut times = TaskTimes::default();
        let mut start = 0.0;
        for (_, kind, end) in groups {
            let end = end.unwrap_or(now).max(start);
            let d = end - start;
            start = end;
            match kind {
                ObjectKind::Bolt => times.bolts = d,
                ObjectKind::Busbar => times.busbar = d,
                ObjectKind::Cover => times.cover = d,
                ObjectKind::Module => times.modules = d,
            }
        }
        times
    }

    pub fn telemetry_state(&self) -> TelemetryState {
        TelemetryState {
            t_us: self.t_us(),
            master_q: self.master.q.iter().copied().collect(),
            slave_q: self.slave.q.iter().copied().collect(),
            ee_xy: self.slave_ee(),
            link_lengths: self.slave_model.link_lengths.clone(),
            mode: self.fsm.mode,
            fsm: self.fsm.state,
            violations: self.fsm.violation_count,
            task_status: self
                .workcell
                .objects
                .iter()
                .map(|o| ObjectStatusView {
                    id: o.spec.id,
                    kind: o.spec.kind,
                    phase: self.workcell.status.phase(o.spec.id).unwrap_or(ObjectPhase::Pending),
                    position: o.position,
                })
                .collect(),
            timers: Timers { elapsed_s: self.t(), per_task_s: self.task_times() },
            holding: self.workcell.gripper.holding,
            force_setpoint: self.workcell.gripper.force_setpoint,
            max_grip_force: self.limits.max_grip_force,
            speed_scale: self.limits.speed_scale,
            camera: self.camera,
            link_stale: self.link_stale(),
            plan_remaining: self.fsm.active_plan.as_ref().map_or(0, |p| p.remaining()),
        }
    }

    pub fn record(&self) -> SessionRecord {
        let sorted_bolts = self
            .workcell
            .objects
            .iter()
            .filter(|o| o.spec.kind == ObjectKind::Bolt)
            .filter(|o| self.workcell.status.phase(o.spec.id) == Some(ObjectPhase::Sorted))
            .count() as u32;
        SessionRecord {
            mode: self.config.mode.number(),
            im_label: self.config.im_label.clone(),
            per_task_s: self.task_times(),
            sorted_bolts,
            violations: self.fsm.violation_count,
        }
    }

    pub fn finish(self) -> SessionArtifacts {
        let record = self.record();
        let summary = SessionSummary {
            ticks: self.tick,
            duration_s: self.t(),
            completed: self.workcell.is_complete(),
            final_state: self.fsm.state,
            sorted: self.workcell.status.sorted_count(),
            objects: self.workcell.objects.len(),
            master_to_slave: self.to_slave.stats(),
            slave_to_master: self.to_master.stats(),
            decode_errors: self.decode_errors,
            frame_digest: [self.digests[0].clone().finalize(), self.digests[1].clone().finalize()],
            previews: self.previews,
            auto_approach_violations: self.auto_violations,
            diagnostics: self.diagnostics,
        };
        SessionArtifacts { record, summary, events: self.events, telemetry: self.telemetry, frames: self.frames }
    }
}

/// Runs a session to completion or `config.max_ticks`.
pub fn run_nodes(
    loaded: &LoadedScenario,
    config: SessionConfig,
    operator: &mut dyn OperatorSource,
) -> Result<SessionArtifacts, SessionError> {
    let mut session = Session::new(loaded, config)?;
    while !session.finished() {
        session.step(operator)?;
    }
    Ok(session.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn short_config(ticks: u64) -> SessionConfig {
        SessionConfig { stop_when_complete: false, ..SessionConfig::new(Mode::Manual, ticks) }
    }

    #[test]
    fn idle_session_holds_still() {
        let loaded = workcell::default_scenario();
        let art = run_nodes(&loaded, short_config(500), &mut IdleOperator).unwrap();
        assert_eq!(art.summary.ticks, 500);
        assert_eq!(art.summary.master_to_slave.sent, 500);
        assert_eq!(art.events.len(), 1);
        assert_eq!(art.summary.final_state, FsmState::Idle);
    }

    #[test]
    fn commands_route_to_fsm() {
        let loaded = workcell::default_scenario();
        let mut s = Session::new(&loaded, short_config(10)).unwrap();
        assert!(matches!(s.command(Command::Execute), Err(CommandError::Rejected(_))));
        s.command(Command::SetMode { mode: Mode::SemiAuto }).unwrap();
        assert_eq!(s.fsm().mode, Mode::SemiAuto);
        assert!(s.command(Command::SetSpeed { scale: 0.0 }).is_err());
        s.command(Command::SetSpeed { scale: 0.25 }).unwrap();
        assert_eq!(s.limits().speed_scale, 0.25);
        s.command(Command::Camera { delta: -1 }).unwrap();
        assert_eq!(s.telemetry_state().camera, 3);
        assert!(s.command(Command::Jog { velocity: vec![0.0] }).is_err());
        assert!(matches!(s.command(Command::Grip { close: false }), Err(CommandError::Workcell(WorkcellError::NotHolding))));
    }

    #[test]
    fn link_goes_stale_under_delay() {
        let loaded = workcell::default_scenario();
        let mut config = short_config(30);
        config.channel = ChannelModel { delay_ms: 20.0, ..Default::default() };
        let mut s = Session::new(&loaded, config).unwrap();
        for _ in 0..15 {
            s.step(&mut IdleOperator).unwrap();
        }
        assert!(s.link_stale());
        for _ in 0..10 {
            s.step(&mut IdleOperator).unwrap();
        }
        assert!(!s.link_stale());
    }
}
