//! Scenario model: objects with masks and priorities, a disposal region, a
//! force-gated gripper, held-object contact torques and the headless
//! scripted operator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{self, ImpedanceGains, MotionLimits};
use crate::dynamics::{self, ArmModel, DynamicsError};
use crate::perception::{self, Calibration, Mask, ObjectDescriptor, PerceptionError, WorldMapping};
use crate::planning::ApproachSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkcellError {
    #[error("gripper is not holding an object")]
    NotHolding,
    #[error("gripper is already holding object {0}")]
    AlreadyHolding(u32),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Bolt,
    Busbar,
    Cover,
    Module,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [ObjectKind::Bolt, ObjectKind::Busbar, ObjectKind::Cover, ObjectKind::Module];

    pub fn default_min_grip_force(self) -> f64 {
        match self {
            ObjectKind::Bolt | ObjectKind::Busbar => 5.0,
            ObjectKind::Cover => 15.0,
            ObjectKind::Module => 10.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Bolt => "bolt",
            ObjectKind::Busbar => "busbar",
            ObjectKind::Cover => "cover",
            ObjectKind::Module => "module",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: u32,
    pub kind: ObjectKind,
    /// Mask file name, relative to the scenario's mask directory.
    pub mask: String,
    pub pl: u32,
    pub mass: f64,
    pub grasp_radius: f64,
    pub min_grip_force: f64,
}

/// Axis-aligned rectangle in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    /// Drop point `i` on a 3 × 3 grid inset to the middle half of the
    /// rectangle, so sorted objects do not pile on one spot.
    pub fn slot(&self, i: usize) -> [f64; 2] {
        let [cx, cy] = self.center();
        let dx = (self.x_max - self.x_min) * 0.25;
        let dy = (self.y_max - self.y_min) * 0.25;
        let col = (i % 3) as f64 - 1.0;
        let row = ((i / 3) % 3) as f64 - 1.0;
        [cx + col * dx, cy + row * dy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    /// Hz
    pub control_rate: f64,
    /// Hz
    #[serde(default = "default_telemetry_rate")]
    pub telemetry_rate: f64,
}

fn default_telemetry_rate() -> f64 {
    30.0
}

impl Default for Rates {
    fn default() -> Self {
        Self { control_rate: 1000.0, telemetry_rate: default_telemetry_rate() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_stiffness")]
    pub stiffness_fraction: f64,
    #[serde(default = "default_damping")]
    pub damping_ratio: f64,
    /// Explicit gains; synthesized from the arm model when absent.
    #[serde(default)]
    pub gains: Option<ImpedanceGains>,
    #[serde(default)]
    pub limits: MotionLimits,
    /// Bandwidth of the operator's hand velocity servo on the master arm,
    /// 1/s; joint `i` gets damping `hand_bandwidth · M_ii(home)`.
    #[serde(default = "default_hand_bandwidth")]
    pub hand_bandwidth: f64,
}

fn default_stiffness() -> f64 {
    control::DEFAULT_STIFFNESS_FRACTION
}

fn default_damping() -> f64 {
    control::DEFAULT_DAMPING_RATIO
}

fn default_hand_bandwidth() -> f64 {
    30.0
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            stiffness_fraction: default_stiffness(),
            damping_ratio: default_damping(),
            gains: None,
            limits: MotionLimits::default(),
            hand_bandwidth: default_hand_bandwidth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Slave arm.
    pub arm: ArmModel,
    /// Master arm; identical to `arm` when absent.
    #[serde(default)]
    pub master_arm: Option<ArmModel>,
    #[serde(rename = "object")]
    pub objects: Vec<ObjectSpec>,
    pub disposal: Rect,
    pub calibration: Calibration,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub approach: ApproachSpec,
    /// Start configuration and planner seed.
    #[serde(default)]
    pub home_q: Option<Vec<f64>>,
}

impl Scenario {
    pub fn master(&self) -> &ArmModel {
        self.master_arm.as_ref().unwrap_or(&self.arm)
    }

    pub fn home(&self) -> DVector<f64> {
        match &self.home_q {
            Some(q) => DVector::from_column_slice(q),
            None => self.arm.home(),
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rates.control_rate
    }

    pub fn gains(&self) -> Result<ImpedanceGains, WorkcellError> {
        match &self.control.gains {
            Some(g) => Ok(g.clone()),
            None => control::default_gains(&self.arm, self.control.stiffness_fraction, self.control.damping_ratio)
                .map_err(|e| WorkcellError::InvalidScenario(format!("{e}"))),
        }
    }

    pub fn validate(&self) -> Result<(), WorkcellError> {
        let bad = |m: String| Err(WorkcellError::InvalidScenario(m));
        self.arm.validate()?;
        if let Some(master) = &self.master_arm {
            master.validate()?;
            if master.n != self.arm.n {
                return bad(format!("master has {} joints, slave has {}", master.n, self.arm.n));
            }
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate object id {}", w[0]));
        }
        for o in &self.objects {
            if !(o.mass > 0.0 && o.grasp_radius > 0.0 && o.min_grip_force >= 0.0) {
                return bad(format!("object {} has non-positive mass, radius or force", o.id));
            }
        }
        let d = &self.disposal;
        if !(d.x_min < d.x_max && d.y_min < d.y_max) {
            return bad("disposal rectangle is degenerate".into());
        }
        if !(self.rates.control_rate.is_finite() && self.rates.control_rate > 0.0) {
            return bad("control_rate must be > 0".into());
        }
        if !(self.control.hand_bandwidth.is_finite() && self.control.hand_bandwidth > 0.0) {
            return bad("hand_bandwidth must be > 0".into());
        }
        if !(self.rates.telemetry_rate.is_finite() && self.rates.telemetry_rate > 0.0) {
            return bad("telemetry_rate must be > 0".into());
        }
        self.calibration.validate()?;
        self.control
            .limits
            .validate()
            .map_err(|e| WorkcellError::InvalidScenario(format!("{e}")))?;
        if let Some(g) = &self.control.gains {
            g.validate().map_err(|e| WorkcellError::InvalidScenario(format!("{e}")))?;
            if g.dof() != self.arm.n {
                return bad("gain vectors do not match joint count".into());
            }
        }
        if let Some(h) = &self.home_q {
            if h.len() != self.arm.n {
                return bad("home_q does not match joint count".into());
            }
        }
        Ok(())
    }
}

/// A scenario together with one mask per object, in object order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub masks: Vec<Mask>,
}

impl LoadedScenario {
    pub fn new(scenario: Scenario, masks: Vec<Mask>) -> Result<Self, WorkcellError> {
        scenario.validate()?;
        if masks.len() != scenario.objects.len() {
            return Err(WorkcellError::InvalidScenario(format!(
                "{} masks for {} objects",
                masks.len(),
                scenario.objects.len()
            )));
        }
        Ok(Self { scenario, masks })
    }

    /// Descriptors in object order, with the object's `pL` from the scenario.
    pub fn descriptors(&self) -> Result<Vec<ObjectDescriptor>, WorkcellError> {
        let mut masks = self.masks.clone();
        for (mask, spec) in masks.iter_mut().zip(&self.scenario.objects) {
            mask.pl = spec.pl;
        }
        Ok(perception::analyze_all(&masks, WorldMapping::Calibrated(self.scenario.calibration))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    /// N
    pub force_setpoint: f64,
    pub holding: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectPhase {
    Pending,
    Grasped,
    Sorted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusChange {
    pub id: u32,
    pub phase: ObjectPhase,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStatus {
    /// Phase per object, in scenario object order.
    pub phases: Vec<(u32, ObjectPhase)>,
    pub changes: Vec<StatusChange>,
}

impl TaskStatus {
    pub fn phase(&self, id: u32) -> Option<ObjectPhase> {
        self.phases.iter().find(|(i, _)| *i == id).map(|(_, p)| *p)
    }

    pub fn sorted_count(&self) -> usize {
        self.phases.iter().filter(|(_, p)| *p == ObjectPhase::Sorted).count()
    }

    fn set(&mut self, id: u32, phase: ObjectPhase, t: f64) {
        if let Some(entry) = self.phases.iter_mut().find(|(i, _)| *i == id) {
            entry.1 = phase;
            self.changes.push(StatusChange { id, phase, t });
        }
    }
}

/// Runtime state of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkObject {
    pub spec: ObjectSpec,
    pub descriptor: ObjectDescriptor,
    /// Current world position of the object's centroid.
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GraspOutcome {
    Attached { id: u32 },
    NothingInReach,
    InsufficientForce { id: u32, required: f64, available: f64 },
}

impl GraspOutcome {
    pub fn diagnostic(&self) -> String {
        match self {
            GraspOutcome::Attached { id } => format!("attached object {id}"),
            GraspOutcome::NothingInReach => "no pending object within grasp radius".into(),
            GraspOutcome::InsufficientForce { id, required, available } => {
                format!("insufficient force for object {id}: need {required} N, have {available} N")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReleaseOutcome {
    Sorted { id: u32 },
    Relocated { id: u32 },
}

/// Objects, gripper and task progress owned by the session runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workcell {
    pub objects: Vec<WorkObject>,
    pub disposal: Rect,
    pub gripper: GripperState,
    pub status: TaskStatus,
}

impl Workcell {
    pub fn new(loaded: &LoadedScenario) -> Result<Self, WorkcellError> {
        let descriptors = loaded.descriptors()?;
        let objects: Vec<WorkObject> = loaded
            .scenario
            .objects
            .iter()
            .zip(descriptors)
            .map(|(spec, d)| WorkObject { spec: spec.clone(), descriptor: d, position: d.cm_world })
            .collect();
        let phases = objects.iter().map(|o| (o.spec.id, ObjectPhase::Pending)).collect();
        Ok(Self {
            objects,
            disposal: loaded.scenario.disposal,
            gripper: GripperState {
                force_setpoint: loaded.scenario.control.limits.max_grip_force,
                holding: None,
            },
            status: TaskStatus { phases, changes: Vec::new() },
        })
    }

    pub fn object(&self, id: u32) -> Option<&WorkObject> {
        self.objects.iter().find(|o| o.spec.id == id)
    }

    pub fn held_mass(&self) -> Option<f64> {
        self.gripper.holding.and_then(|id| self.object(id)).map(|o| o.spec.mass)
    }

    /// Sets the gripper force, clamped to `[0, max]`.
    pub fn set_force(&mut self, force: f64, max: f64) {
        self.gripper.force_setpoint = force.clamp(0.0, max);
    }

    pub fn is_complete(&self) -> bool {
        self.status.sorted_count() == self.objects.len()
    }

    /// Attaches the nearest pending object whose grasp radius contains
    /// `ee`; ties go to the lower id.
    pub fn try_grasp(&mut self, ee: [f64; 2], t: f64) -> Result<GraspOutcome, WorkcellError> {
        if let Some(id) = self.gripper.holding {
            return Err(WorkcellError::AlreadyHolding(id));
        }
        let ee = Vector2::new(ee[0], ee[1]);
        let nearest = self
            .objects
            .iter()
            .filter(|o| self.status.phase(o.spec.id) == Some(ObjectPhase::Pending))
            .map(|o| ((Vector2::new(o.position[0], o.position[1]) - ee).norm(), o))
            .filter(|(d, o)| *d <= o.spec.grasp_radius)
            .min_by(|(da, a), (db, b)| da.total_cmp(db).then(a.spec.id.cmp(&b.spec.id)));
        let Some((_, obj)) = nearest else {
            return Ok(GraspOutcome::NothingInReach);
        };
        let (id, required) = (obj.spec.id, obj.spec.min_grip_force);
        if self.gripper.force_setpoint < required {
            return Ok(GraspOutcome::InsufficientForce { id, required, available: self.gripper.force_setpoint });
        }
        self.gripper.holding = Some(id);
        self.status.set(id, ObjectPhase::Grasped, t);
        Ok(GraspOutcome::Attached { id })
    }

    /// Drops the held object at `ee`.
    pub fn release(&mut self, ee: [f64; 2], t: f64) -> Result<ReleaseOutcome, WorkcellError> {
        let id = self.gripper.holding.take().ok_or(WorkcellError::NotHolding)?;
        if let Some(obj) = self.objects.iter_mut().find(|o| o.spec.id == id) {
            obj.position = ee;
        }
        if self.disposal.contains(ee) {
            self.status.set(id, ObjectPhase::Sorted, t);
            Ok(ReleaseOutcome::Sorted { id })
        } else {
            self.status.set(id, ObjectPhase::Pending, t);
            Ok(ReleaseOutcome::Relocated { id })
        }
    }
}

/// Joint torques produced by a held mass hanging from the end effector:
/// `Jᵀ · (0, −m·g)`.
pub fn contact_torque(model: &ArmModel, q: &DVector<f64>, held_mass: Option<f64>) -> Result<DVector<f64>, DynamicsError> {
    let Some(mass) = held_mass else {
        if q.len() != model.n {
            return Err(DynamicsError::DimensionMismatch { expected: model.n, got: q.len() });
        }
        return Ok(DVector::zeros(model.n));
    };
    let jac = dynamics::jacobian(model, q)?;
    let force = DVector::from_vec(vec![0.0, -mass * model.gravity]);
    Ok(jac.transpose() * force)
}

/// Noise and gain of the headless operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorPolicy {
    /// 1/s
    pub gain: f64,
    /// rad/s, standard deviation of the per-joint command noise.
    pub noise_std: f64,
    pub seed: u64,
    /// Each noise draw is held for this long, s (0 = fresh draw every call).
    #[serde(default)]
    pub noise_hold_s: f64,
}

impl Default for OperatorPolicy {
    fn default() -> Self {
        Self { gain: 3.0, noise_std: 0.0, seed: 0, noise_hold_s: 0.0 }
    }
}

/// `q̇_cmd = gain·(q_target − q_l) + noise`, clamped to `speed_scale·qd_max`.
#[derive(Debug, Clone)]
pub struct ScriptedOperator {
    policy: OperatorPolicy,
    rng: ChaCha8Rng,
    noise: Vec<f64>,
    next_draw_t: f64,
}

impl ScriptedOperator {
    pub fn new(policy: OperatorPolicy) -> Self {
        Self { policy, rng: ChaCha8Rng::seed_from_u64(policy.seed), noise: Vec::new(), next_draw_t: f64::NEG_INFINITY }
    }

    pub fn policy(&self) -> &OperatorPolicy {
        &self.policy
    }

    fn refresh_noise(&mut self, n: usize, t: f64) {
        if self.noise.len() != n || t >= self.next_draw_t {
            self.noise = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    z * self.policy.noise_std
                })
                .collect();
            self.next_draw_t = if self.policy.noise_hold_s > 0.0 { t + self.policy.noise_hold_s } else { t };
        }
    }

    /// Master velocity command at time `t`.
    pub fn command(
        &mut self,
        model: &ArmModel,
        q_l: &DVector<f64>,
        q_target: &DVector<f64>,
        speed_scale: f64,
        t: f64,
    ) -> DVector<f64> {
        let n = q_l.len();
        self.refresh_noise(n, t);
        DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let cap = model.qd_max[i] * speed_scale;
                (self.policy.gain * (q_target[i] - q_l[i]) + self.noise[i]).clamp(-cap, cap)
            }),
        )
    }
}

/// Bundled layout: 8 bolts, a cover, a busbar and 4 modules on a
/// 160 × 120 px scene, with a disposal area beside the stack.
pub fn default_scenario() -> LoadedScenario {
    const ROWS: usize = 120;
    const COLS: usize = 160;

    let mut arm = ArmModel::new(vec![0.45, 0.35, 0.20], vec![1.5, 1.0, 0.4], 9.81)
        .expect("bundled arm model is valid");
    arm.q_min = vec![-2.8, -2.8, -2.2];
    arm.q_max = vec![2.8, 2.8, 2.2];

    let mut objects = Vec::new();
    let mut masks = Vec::new();
    let mut push = |kind: ObjectKind, pl: u32, mass: f64, radius: f64, center: [f64; 2], len: f64, wid: f64| {
        let id = objects.len() as u32;
        let mask = perception::rasterize_rect(ROWS, COLS, center, len, wid, 0.0, pl)
            .expect("bundled mask dimensions are valid");
        objects.push(ObjectSpec {
            id,
            kind,
            mask: format!("{}_{id:02}.txt", kind.name()),
            pl,
            mass,
            grasp_radius: radius,
            min_grip_force: kind.default_min_grip_force(),
        });
        masks.push(mask);
    };
    for row in [38.0, 62.0] {
        for col in [30.0, 60.0, 100.0, 130.0] {
            push(ObjectKind::Bolt, 0, 0.05, 0.012, [col, row], 3.0, 3.0);
        }
    }
    push(ObjectKind::Cover, 1, 2.0, 0.03, [80.0, 50.0], 120.0, 32.0);
    push(ObjectKind::Busbar, 2, 0.1, 0.02, [80.0, 78.0], 90.0, 4.0);
    for col in [35.0, 65.0, 95.0, 125.0] {
        push(ObjectKind::Module, 3, 1.0, 0.025, [col, 100.0], 26.0, 18.0);
    }

    let scenario = Scenario {
        arm,
        master_arm: None,
        objects,
        disposal: Rect { x_min: 0.74, x_max: 0.92, y_min: -0.42, y_max: -0.28 },
        // x = 0.30 + 2.5 mm·col, y = −0.05 − 2.5 mm·row (image rows grow downward)
        calibration: Calibration { affine: [[0.0025, 0.0, 0.30], [0.0, -0.0025, -0.05]] },
        rates: Rates::default(),
        control: ControlConfig::default(),
        approach: ApproachSpec::default(),
        home_q: Some(vec![-0.3, -0.9, -0.6]),
    };
    LoadedScenario::new(scenario, masks).expect("bundled scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_cell() -> Workcell {
        let mut loaded = default_scenario();
        loaded.scenario.objects.truncate(2);
        loaded.masks.truncate(2);
        let mut cell = Workcell::new(&loaded).unwrap();
        cell.objects[0].position = [0.5, 0.0];
        cell.objects[1].position = [0.51, 0.0];
        cell.objects[0].spec.grasp_radius = 0.05;
        cell.objects[1].spec.grasp_radius = 0.05;
        cell
    }

    #[test]
    fn grasp_exact_position() {
        let mut cell = tiny_cell();
        let out = cell.try_grasp([0.51, 0.0], 1.0).unwrap();
        assert_eq!(out, GraspOutcome::Attached { id: 1 });
        assert_eq!(cell.status.phase(1), Some(ObjectPhase::Grasped));
        assert!(matches!(cell.try_grasp([0.5, 0.0], 1.0), Err(WorkcellError::AlreadyHolding(1))));
    }

    #[test]
    fn grasp_needs_force() {
        let mut cell = tiny_cell();
        cell.set_force(2.0, 20.0);
        let out = cell.try_grasp([0.5, 0.0], 0.0).unwrap();
        assert!(matches!(out, GraspOutcome::InsufficientForce { id: 0, .. }));
        assert!(out.diagnostic().contains("insufficient force"));
        assert_eq!(cell.gripper.holding, None);
        cell.set_force(50.0, 20.0);
        assert_eq!(cell.gripper.force_setpoint, 20.0);
    }

    #[test]
    fn grasp_tie_goes_to_lower_id() {
        let mut cell = tiny_cell();
        let out = cell.try_grasp([0.505, 0.0], 0.0).unwrap();
        assert_eq!(out, GraspOutcome::Attached { id: 0 });
        let mut cell = tiny_cell();
        assert_eq!(cell.try_grasp([0.508, 0.0], 0.0).unwrap(), GraspOutcome::Attached { id: 1 });
        let mut cell = tiny_cell();
        assert_eq!(cell.try_grasp([0.9, 0.9], 0.0).unwrap(), GraspOutcome::NothingInReach);
    }

    #[test]
    fn release_inside_and_outside() {
        let mut cell = tiny_cell();
        assert_eq!(cell.release([0.0, 0.0], 0.0), Err(WorkcellError::NotHolding));
        cell.try_grasp([0.5, 0.0], 1.0).unwrap();
        assert_eq!(cell.release([0.2, 0.2], 2.0).unwrap(), ReleaseOutcome::Relocated { id: 0 });
        assert_eq!(cell.status.phase(0), Some(ObjectPhase::Pending));
        assert_eq!(cell.objects[0].position, [0.2, 0.2]);
        cell.try_grasp([0.2, 0.2], 3.0).unwrap();
        let inside = cell.disposal.center();
        assert_eq!(cell.release(inside, 4.0).unwrap(), ReleaseOutcome::Sorted { id: 0 });
        assert_eq!(cell.status.sorted_count(), 1);
        // sorted objects are never picked again
        assert_eq!(cell.try_grasp(inside, 5.0).unwrap(), GraspOutcome::NothingInReach);
        assert!(cell.status.changes.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn drop_slots_inside_disposal() {
        let r = Rect { x_min: 0.0, x_max: 1.0, y_min: -1.0, y_max: 0.0 };
        for i in 0..12 {
            assert!(r.contains(r.slot(i)));
        }
        assert_eq!(r.slot(4), r.center());
        assert_eq!(r.slot(0), [0.25, -0.75]);
    }

    #[test]
    fn contact_torque_values() {
        let model = ArmModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 9.81).unwrap();
        let q = DVector::zeros(2);
        assert_eq!(contact_torque(&model, &q, None).unwrap(), DVector::zeros(2));
        let one = contact_torque(&model, &q, Some(1.0)).unwrap();
        assert_relative_eq!(one[0].abs(), 19.62, epsilon = 1e-12);
        let three = contact_torque(&model, &q, Some(3.0)).unwrap();
        assert_relative_eq!(three, one * 3.0, epsilon = 1e-12);
    }

    #[test]
    fn operator_command() {
        let model = ArmModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 9.81).unwrap();
        let q = DVector::from_vec(vec![0.3, -0.2]);
        let mut op = ScriptedOperator::new(OperatorPolicy { gain: 2.0, noise_std: 0.0, seed: 1, noise_hold_s: 0.0 });
        assert_eq!(op.command(&model, &q, &q, 1.0, 0.0), DVector::zeros(2));
        let far = DVector::from_vec(vec![3.0, -3.0]);
        let cmd = op.command(&model, &q, &far, 0.5, 0.0);
        assert_eq!(cmd, DVector::from_vec(vec![1.0, -1.0]));

        let policy = OperatorPolicy { gain: 2.0, noise_std: 0.4, seed: 9, noise_hold_s: 0.1 };
        let stream = |p: OperatorPolicy| {
            let mut op = ScriptedOperator::new(p);
            (0..500).map(|k| op.command(&model, &q, &q, 1.0, k as f64 * 1e-3)).collect::<Vec<_>>()
        };
        let a = stream(policy);
        assert_eq!(a, stream(policy));
        assert_ne!(a[0], a[150]);
        assert_eq!(a[0], a[50]);
    }

    #[test]
    fn default_scenario_contents() {
        let loaded = default_scenario();
        assert_eq!(loaded.scenario.objects.len(), 14);
        let count = |k: ObjectKind| loaded.scenario.objects.iter().filter(|o| o.kind == k).count();
        assert_eq!(
            (count(ObjectKind::Bolt), count(ObjectKind::Cover), count(ObjectKind::Busbar), count(ObjectKind::Module)),
            (8, 1, 1, 4)
        );
        let d = loaded.descriptors().unwrap();
        let plan = crate::planning::order_objects(&d);
        let kinds: Vec<u32> = plan.ordered.iter().map(|d| d.pl).collect();
        assert!(kinds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn scenario_validation() {
        let mut loaded = default_scenario();
        loaded.scenario.objects[1].id = 0;
        assert!(loaded.scenario.validate().is_err());
        let mut loaded = default_scenario();
        loaded.scenario.disposal.x_max = loaded.scenario.disposal.x_min;
        assert!(loaded.scenario.validate().is_err());
        let mut loaded = default_scenario();
        loaded.scenario.rates.control_rate = 0.0;
        assert!(loaded.scenario.validate().is_err());
    }
}
