//! Headless task-level operator: walks the objects in priority order through
//! approach, descend, grip, lift, transport and release, steering the master
//! arm with [`ScriptedOperator`] velocity commands.

use alloc::vec::Vec;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::autonomy::{FsmState, Mode};
use crate::dynamics::{self, ArmModel, JointState};
use crate::link::{Command, CommandAck, CommandError, Observation, OperatorInput, OperatorSource};
use crate::planning;
use crate::workcell::{ObjectPhase, OperatorPolicy, ScriptedOperator};

/// Operator noise, rad/s, under which manual sessions still finish but drift
/// into joint limits a few times per run.
pub const DEFAULT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub mode: Mode,
    /// Policy for gross motion; fine positioning reuses it with scaled noise.
    pub policy: OperatorPolicy,
    pub fine_noise_scale: f64,
    /// Distance to a goal inside which the fine policy takes over, m.
    pub fine_radius: f64,
    /// End-effector distance that counts as arrived, m.
    pub reach_tol: f64,
    /// Slave joint speed under which the arm counts as still, rad/s.
    pub settle_speed: f64,
    /// Pause between a fault and the recover command, s.
    pub recover_delay_s: f64,
    /// How far inside the limits the recovery jog aims, rad.
    pub recover_margin: f64,
    /// Minimum spacing of repeated commands, s.
    pub retry_s: f64,
    /// Consecutive planning failures before finishing an object by hand.
    pub max_plan_failures: u32,
}

impl PilotConfig {
    pub fn new(mode: Mode, seed: u64, noise_std: f64) -> Self {
        Self {
            mode,
            policy: OperatorPolicy { gain: 3.0, noise_std, seed, noise_hold_s: 0.25 },
            fine_noise_scale: 0.1,
            fine_radius: 0.05,
            reach_tol: 0.01,
            settle_speed: 0.05,
            recover_delay_s: 0.2,
            recover_margin: 0.2,
            retry_s: 0.05,
            max_plan_failures: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Approach,
    Descend,
    Lift,
    Transport,
}

#[derive(Debug, Clone)]
struct Goal {
    phase: Phase,
    object: u32,
    xy: [f64; 2],
    q: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ScriptedPilot {
    config: PilotConfig,
    coarse: ScriptedOperator,
    fine: ScriptedOperator,
    order: Option<Vec<u32>>,
    goal: Option<Goal>,
    lift_from: [f64; 2],
    fault_since: Option<f64>,
    recover_sent: bool,
    reseed_home: bool,
    last_command_t: f64,
    last_state: FsmState,
    plan_failures: u32,
    manual_fallback: Option<u32>,
}

fn max_speed(s: &JointState) -> f64 {
    s.qd.amax()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

impl ScriptedPilot {
    pub fn new(config: PilotConfig) -> Self {
        let fine_policy = OperatorPolicy {
            noise_std: config.policy.noise_std * config.fine_noise_scale,
            seed: config.policy.seed.wrapping_add(1),
            ..config.policy
        };
        Self {
            coarse: ScriptedOperator::new(config.policy),
            fine: ScriptedOperator::new(fine_policy),
            config,
            order: None,
            goal: None,
            lift_from: [0.0; 2],
            fault_since: None,
            recover_sent: false,
            reseed_home: false,
            last_command_t: f64::NEG_INFINITY,
            last_state: FsmState::Idle,
            plan_failures: 0,
            manual_fallback: None,
        }
    }

    /// Current target: object id, end-effector point and joint goal.
    /// Current target as `(object id, end-effector xy, master joint aim)`.
    pub fn goal(&self) -> Option<(u32, [f64; 2], &DVector<f64>)> {
        self.goal.as_ref().map(|g| (g.object, g.xy, &g.q))
    }

    fn hold(n: usize, commands: Vec<Command>) -> OperatorInput {
        OperatorInput { velocity: Some(DVector::zeros(n)), commands }
    }

    fn rate_limited(&mut self, t: f64, cmd: Command) -> Vec<Command> {
        if t - self.last_command_t >= self.config.retry_s {
            self.last_command_t = t;
            alloc::vec![cmd]
        } else {
            Vec::new()
        }
    }

    fn current_object(&mut self, obs: &Observation<'_>) -> Option<u32> {
        let cell = obs.workcell;
        if let Some(id) = cell.gripper.holding {
            return Some(id);
        }
        if obs.fsm.state == FsmState::Handover {
            let d = obs.fsm.active_plan.as_ref()?.current()?;
            let obj = cell.objects.iter().find(|o| o.descriptor == *d)?;
            return (cell.status.phase(obj.spec.id) == Some(ObjectPhase::Pending)).then_some(obj.spec.id);
        }
        let order = self.order.get_or_insert_with(|| {
            let plan = planning::order_objects(obs.descriptors);
            plan.ordered
                .iter()
                .filter_map(|d| cell.objects.iter().find(|o| o.descriptor == *d).map(|o| o.spec.id))
                .collect()
        });
        order.iter().copied().find(|id| cell.status.phase(*id) == Some(ObjectPhase::Pending))
    }

    fn solve(&self, model: &ArmModel, xy: [f64; 2], current: &DVector<f64>, home: &DVector<f64>) -> DVector<f64> {
        let seed = if self.reseed_home { home } else { current };
        planning::solve_ik(model, xy, seed)
            .or_else(|_| planning::solve_ik(model, xy, home))
            .unwrap_or_else(|_| current.clone())
    }

    fn set_goal(&mut self, obs: &Observation<'_>, seen: &JointState, phase: Phase, object: u32, xy: [f64; 2]) {
        let q = self.solve(&obs.scenario.arm, xy, &seen.q, &obs.scenario.home());
        self.reseed_home = false;
        self.goal = Some(Goal { phase, object, xy, q });
    }

    fn manipulate(&mut self, obs: &Observation<'_>, seen: &JointState) -> OperatorInput {
        let n = seen.q.len();
        let Some(id) = self.current_object(obs) else {
            return Self::hold(n, Vec::new());
        };
        let cell = obs.workcell;
        let Some(obj) = cell.object(id) else {
            return Self::hold(n, Vec::new());
        };
        let holding = cell.gripper.holding == Some(id);
        let offset = obs.scenario.approach.offset;

        let want = match (&self.goal, holding) {
            (Some(g), _) if g.object != id => None,
            (Some(g), true) if matches!(g.phase, Phase::Lift | Phase::Transport) => Some(g.phase),
            (Some(g), false) if matches!(g.phase, Phase::Approach | Phase::Descend) => Some(g.phase),
            (Some(g), true) if g.phase == Phase::Descend => Some(Phase::Lift),
            _ => None,
        };
        let phase = want.unwrap_or(if holding {
            Phase::Transport
        } else if obs.fsm.state == FsmState::Handover {
            Phase::Descend
        } else {
            Phase::Approach
        });
        let xy = match phase {
            Phase::Approach => [obj.position[0] + offset[0], obj.position[1] + offset[1]],
            Phase::Descend => obj.position,
            Phase::Lift => [self.lift_from[0] + offset[0], self.lift_from[1] + offset[1]],
            Phase::Transport => cell.disposal.slot(id as usize),
        };
        if self.goal.as_ref().is_none_or(|g| g.phase != phase || g.object != id || g.xy != xy) {
            if phase == Phase::Lift {
                self.lift_from = obj.position;
            }
            let xy = if phase == Phase::Lift {
                [self.lift_from[0] + offset[0], self.lift_from[1] + offset[1]]
            } else {
                xy
            };
            self.set_goal(obs, seen, phase, id, xy);
        }
        let goal = self.goal.clone().expect("goal set above");

        let ee = dynamics::forward_kinematics(&obs.scenario.arm, &seen.q).unwrap_or_default();
        let ee = [ee.x, ee.y];
        let d = dist(ee, goal.xy);
        let still = max_speed(seen) < self.config.settle_speed;
        let mut commands = Vec::new();
        match phase {
            Phase::Approach if d < self.config.reach_tol && still => {
                let xy = obj.position;
                self.set_goal(obs, seen, Phase::Descend, id, xy);
            }
            Phase::Descend if d <= 0.6 * obj.spec.grasp_radius => {
                commands = self.rate_limited(obs.t, Command::Grip { close: true });
            }
            Phase::Lift if d < self.config.reach_tol => {
                let xy = cell.disposal.slot(id as usize);
                self.set_goal(obs, seen, Phase::Transport, id, xy);
            }
            Phase::Transport if d < self.config.reach_tol && still => {
                commands = self.rate_limited(obs.t, Command::Grip { close: false });
            }
            _ => {}
        }

        let goal = self.goal.as_ref().expect("goal set above");
        // Aim the master so that the slave, not the master, lands on the goal.
        let aim = &goal.q + (&obs.master.q - &seen.q);
        let near = dist(ee, goal.xy) < self.config.fine_radius;
        let op = if goal.phase == Phase::Descend || near { &mut self.fine } else { &mut self.coarse };
        let velocity = op.command(obs.scenario.master(), &obs.master.q, &aim, obs.limits.speed_scale, obs.t);
        OperatorInput { velocity: Some(velocity), commands }
    }

    fn recover_jog(&self, obs: &Observation<'_>, seen: &JointState) -> DVector<f64> {
        let model = &obs.scenario.arm;
        let m = self.config.recover_margin;
        let gain = self.config.policy.gain;
        DVector::from_iterator(
            seen.q.len(),
            (0..seen.q.len()).map(|i| {
                let lo = model.q_min[i] + m;
                let hi = model.q_max[i] - m;
                let target = if lo <= hi { seen.q[i].clamp(lo, hi) } else { 0.5 * (model.q_min[i] + model.q_max[i]) };
                let cap = model.qd_max[i] * obs.limits.speed_scale;
                (gain * (target - seen.q[i])).clamp(-cap, cap)
            }),
        )
    }
}

impl OperatorSource for ScriptedPilot {
    fn act(&mut self, obs: &Observation<'_>) -> OperatorInput {
        let n = obs.master.q.len();
        let state = obs.fsm.state;
        if self.last_state == FsmState::Planning && state == FsmState::Idle {
            self.plan_failures += 1;
        }
        if self.last_state == FsmState::Planning && state == FsmState::AutoApproach {
            self.plan_failures = 0;
        }
        self.last_state = state;
        let Some(seen) = obs.slave_seen else {
            return Self::hold(n, Vec::new());
        };

        match state {
            FsmState::Fault => {
                self.goal = None;
                self.reseed_home = true;
                let since = *self.fault_since.get_or_insert(obs.t);
                let mut commands = Vec::new();
                if !self.recover_sent && obs.t - since >= self.config.recover_delay_s {
                    self.recover_sent = true;
                    commands.push(Command::Recover);
                }
                Self::hold(n, commands)
            }
            FsmState::Recovering => {
                self.fault_since = None;
                self.recover_sent = false;
                OperatorInput { velocity: Some(self.recover_jog(obs, seen)), commands: Vec::new() }
            }
            FsmState::Idle => {
                self.goal = None;
                let all_done = obs.workcell.is_complete();
                let cmd = match self.config.mode {
                    _ if all_done => None,
                    Mode::Manual => Some(Command::SetMode { mode: Mode::Manual }),
                    Mode::SemiAuto if obs.fsm.mode != Mode::SemiAuto => Some(Command::SetMode { mode: Mode::SemiAuto }),
                    Mode::SemiAuto if self.plan_failures >= self.config.max_plan_failures => {
                        self.plan_failures = 0;
                        self.manual_fallback = self.current_object(obs);
                        Some(Command::SetMode { mode: Mode::Manual })
                    }
                    Mode::SemiAuto => Some(Command::Execute),
                };
                let commands = match cmd {
                    Some(c) => self.rate_limited(obs.t, c),
                    None => Vec::new(),
                };
                Self::hold(n, commands)
            }
            FsmState::Planning | FsmState::AutoApproach => {
                self.goal = None;
                Self::hold(n, Vec::new())
            }
            FsmState::ManualTeleop | FsmState::Handover => {
                if self.config.mode == Mode::SemiAuto && state == FsmState::ManualTeleop {
                    let done = match self.manual_fallback {
                        Some(id) => obs.workcell.status.phase(id) == Some(ObjectPhase::Sorted),
                        None => true,
                    };
                    if done && obs.workcell.gripper.holding.is_none() {
                        self.manual_fallback = None;
                        let commands = self.rate_limited(obs.t, Command::SetMode { mode: Mode::SemiAuto });
                        return Self::hold(n, commands);
                    }
                }
                self.manipulate(obs, seen)
            }
        }
    }

    fn feedback(&mut self, results: &[Result<CommandAck, CommandError>]) {
        for r in results {
            if let Ok(CommandAck::Release(_)) = r {
                self.goal = None;
            }
        }
    }
}
