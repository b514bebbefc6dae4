//! Disassembly ordering, planar IK, synchronized trapezoidal trajectories and
//! dry-run validation.

use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::MotionLimits;
use crate::dynamics::{self, ArmModel, DynamicsError, JointState, LimitReport};
use crate::perception::ObjectDescriptor;

pub const IK_TOLERANCE: f64 = 1e-4;
pub const IK_MAX_ITERATIONS: usize = 500;
const IK_DAMPING: f64 = 1e-2;
const IK_REFINE_TOLERANCE: f64 = 1e-12;
const REACH_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanningError {
    #[error("target ({x:.4}, {y:.4}) lies outside the reachable workspace")]
    Unreachable { x: f64, y: f64 },
    #[error("inverse kinematics did not converge (residual {residual:.3e} m)")]
    NoConvergence { residual: f64 },
    #[error("inverse kinematics solution violates joint limits")]
    LimitsViolated,
    #[error("{which} configuration is outside joint limits")]
    OutsideLimits { which: &'static str },
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Objects in disassembly order and the index of the next target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisassemblyPlan {
    pub ordered: Vec<ObjectDescriptor>,
    pub cursor: usize,
}

impl DisassemblyPlan {
    pub fn current(&self) -> Option<&ObjectDescriptor> {
        self.ordered.get(self.cursor)
    }

    pub fn remaining(&self) -> usize {
        self.ordered.len().saturating_sub(self.cursor)
    }

    pub fn advance(&mut self) {
        if self.cursor < self.ordered.len() {
            self.cursor += 1;
        }
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.ordered.len()
    }
}

/// Lower priority level first, larger area first within a level, then
/// world centroid ascending.
pub fn disassembly_order(a: &ObjectDescriptor, b: &ObjectDescriptor) -> Ordering {
    a.pl.cmp(&b.pl)
        .then_with(|| b.area.cmp(&a.area))
        .then_with(|| a.cm_world[0].total_cmp(&b.cm_world[0]))
        .then_with(|| a.cm_world[1].total_cmp(&b.cm_world[1]))
        .then_with(|| a.theta.total_cmp(&b.theta))
        .then_with(|| a.cm_px[0].total_cmp(&b.cm_px[0]))
        .then_with(|| a.cm_px[1].total_cmp(&b.cm_px[1]))
}

pub fn order_objects(descriptors: &[ObjectDescriptor]) -> DisassemblyPlan {
    let mut ordered = descriptors.to_vec();
    ordered.sort_by(disassembly_order);
    DisassemblyPlan { ordered, cursor: 0 }
}

/// Inner and outer radius of the planar chain's reachable annulus.
pub fn reach_annulus(model: &ArmModel) -> (f64, f64) {
    let total = model.reach();
    let longest = model.link_lengths.iter().copied().fold(0.0, f64::max);
    ((2.0 * longest - total).max(0.0), total)
}

fn within_limits(model: &ArmModel, q: &DVector<f64>) -> bool {
    q.iter()
        .enumerate()
        .all(|(i, v)| *v >= model.q_min[i] && *v <= model.q_max[i])
}

fn clamp_to_limits(model: &ArmModel, q: &mut DVector<f64>) {
    for i in 0..q.len() {
        q[i] = q[i].clamp(model.q_min[i], model.q_max[i]);
    }
}

fn dls(model: &ArmModel, target: Vector2<f64>, seed: &DVector<f64>, project: bool) -> Result<(DVector<f64>, f64), PlanningError> {
    let mut q = seed.clone();
    for _ in 0..IK_MAX_ITERATIONS {
        let err = target - dynamics::forward_kinematics(model, &q)?;
        if err.norm() < IK_REFINE_TOLERANCE {
            break;
        }
        let jac = dynamics::jacobian(model, &q)?;
        let jjt = &jac * jac.transpose();
        let damped = Matrix2::new(
            jjt[(0, 0)] + IK_DAMPING * IK_DAMPING,
            jjt[(0, 1)],
            jjt[(1, 0)],
            jjt[(1, 1)] + IK_DAMPING * IK_DAMPING,
        );
        let Some(inv) = damped.try_inverse() else {
            break;
        };
        let w = inv * err;
        let dq = jac.transpose() * DVector::from_column_slice(w.as_slice());
        q += dq;
        if project {
            clamp_to_limits(model, &mut q);
        }
    }
    let residual = (target - dynamics::forward_kinematics(model, &q)?).norm();
    Ok((q, residual))
}

/// Damped least-squares position IK from `seed`.
pub fn solve_ik(model: &ArmModel, target: [f64; 2], seed: &DVector<f64>) -> Result<DVector<f64>, PlanningError> {
    if seed.len() != model.n {
        return Err(DynamicsError::DimensionMismatch { expected: model.n, got: seed.len() }.into());
    }
    let goal = Vector2::new(target[0], target[1]);
    let dist = goal.norm();
    let (inner, outer) = reach_annulus(model);
    if !dist.is_finite() || dist > outer + REACH_SLACK || dist < inner - REACH_SLACK {
        return Err(PlanningError::Unreachable { x: target[0], y: target[1] });
    }

    let (q, residual) = dls(model, goal, seed, false)?;
    if residual >= IK_TOLERANCE {
        return Err(PlanningError::NoConvergence { residual });
    }
    if within_limits(model, &q) {
        return Ok(q);
    }
    let mut retry_seed = q;
    clamp_to_limits(model, &mut retry_seed);
    let (q, residual) = dls(model, goal, &retry_seed, true)?;
    if residual < IK_TOLERANCE && within_limits(model, &q) {
        Ok(q)
    } else {
        Err(PlanningError::LimitsViolated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    #[serde(with = "crate::dvec_serde")]
    pub q: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    pub duration: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn final_q(&self) -> Option<&DVector<f64>> {
        self.waypoints.last().map(|w| &w.q)
    }

    /// Reference state at waypoint `k` with a forward-difference velocity.
    pub fn reference(&self, k: usize) -> JointState {
        let k = k.min(self.waypoints.len().saturating_sub(1));
        let wp = &self.waypoints[k];
        let n = wp.q.len();
        let qd = match self.waypoints.get(k + 1) {
            Some(next) => (&next.q - &wp.q) / (next.t - wp.t),
            None => DVector::zeros(n),
        };
        JointState { q: wp.q.clone(), qd, tau_ext: DVector::zeros(n) }
    }
}

/// Sampling and profile shape for [`plan_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Waypoint spacing, s.
    pub period: f64,
    /// Acceleration (and deceleration) phase as a fraction of the move time.
    pub ramp_fraction: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { period: dynamics::DEFAULT_DT, ramp_fraction: 0.2 }
    }
}

/// Position along a trapezoid of total distance `dist`, duration `total`,
/// ramp time `ramp`.
fn trapezoid_position(dist: f64, total: f64, ramp: f64, t: f64) -> f64 {
    let v = dist / (total - ramp);
    let a = v / ramp;
    if t <= 0.0 {
        0.0
    } else if t < ramp {
        0.5 * a * t * t
    } else if t <= total - ramp {
        0.5 * a * ramp * ramp + v * (t - ramp)
    } else if t < total {
        let rem = total - t;
        dist - 0.5 * a * rem * rem
    } else {
        dist
    }
}

/// Time-synchronized per-joint trapezoidal profile, peak speed capped at
/// `speed_scale · qd_max`.
pub fn plan_trajectory(
    model: &ArmModel,
    q_start: &DVector<f64>,
    q_goal: &DVector<f64>,
    limits: &MotionLimits,
    config: &PlannerConfig,
) -> Result<Trajectory, PlanningError> {
    for (q, which) in [(q_start, "start"), (q_goal, "goal")] {
        if q.len() != model.n {
            return Err(DynamicsError::DimensionMismatch { expected: model.n, got: q.len() }.into());
        }
        if !within_limits(model, q) {
            return Err(PlanningError::OutsideLimits { which });
        }
    }
    if !(config.period > 0.0 && config.period.is_finite()) {
        return Err(PlanningError::InvalidConfig("period must be > 0"));
    }
    if !(config.ramp_fraction > 0.0 && config.ramp_fraction <= 0.5) {
        return Err(PlanningError::InvalidConfig("ramp_fraction must be in (0, 0.5]"));
    }
    limits.validate().map_err(|_| PlanningError::InvalidConfig("invalid motion limits"))?;

    let delta = q_goal - q_start;
    let cruise_share = 1.0 - config.ramp_fraction;
    let duration = (0..model.n)
        .map(|i| delta[i].abs() / (cruise_share * limits.speed_scale * model.qd_max[i]))
        .fold(0.0, f64::max);
    if duration == 0.0 {
        return Ok(Trajectory {
            waypoints: alloc::vec![Waypoint { t: 0.0, q: q_goal.clone() }],
            duration: 0.0,
        });
    }

    let ramp = config.ramp_fraction * duration;
    let steps = libm::ceil(duration / config.period - 1e-9) as usize;
    let mut waypoints = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let t = k as f64 * config.period;
        let q = DVector::from_iterator(
            model.n,
            (0..model.n).map(|i| q_start[i] + trapezoid_position(delta[i], duration, ramp, t)),
        );
        waypoints.push(Waypoint { t, q });
    }
    waypoints.push(Waypoint { t: duration, q: q_goal.clone() });
    Ok(Trajectory { waypoints, duration })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointViolation {
    pub index: usize,
    pub report: LimitReport,
}

/// Dry-run result: one entry per offending waypoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreviewReport {
    pub violations: Vec<WaypointViolation>,
}

impl PreviewReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// Union of all per-waypoint reports, each joint listed once.
    pub fn summary(&self) -> LimitReport {
        let mut out = LimitReport::default();
        for v in &self.violations {
            for p in &v.report.position_violations {
                if !out.position_violations.contains(p) {
                    out.position_violations.push(*p);
                }
            }
            for j in &v.report.velocity_violations {
                if !out.velocity_violations.contains(j) {
                    out.velocity_violations.push(*j);
                }
            }
        }
        out
    }
}

/// Checks every waypoint against position limits and every segment's
/// finite-difference speed against `qd_max`.
pub fn preview(model: &ArmModel, traj: &Trajectory) -> PreviewReport {
    let mut report = PreviewReport::default();
    for (k, _) in traj.waypoints.iter().enumerate() {
        let state = traj.reference(k);
        let mut limits = dynamics::check_limits(model, &state);
        // reference() gives the outgoing segment speed; the last point has none.
        if k + 1 == traj.waypoints.len() {
            limits.velocity_violations.clear();
        }
        if !limits.is_empty() {
            report.violations.push(WaypointViolation { index: k, report: limits });
        }
    }
    report
}

/// Approach pose: the object's world centroid plus the operator's offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproachSpec {
    pub offset: [f64; 2],
    pub hover_epsilon: f64,
}

impl Default for ApproachSpec {
    fn default() -> Self {
        Self { offset: [0.0, 0.06], hover_epsilon: 0.005 }
    }
}

pub fn approach_target(d: &ObjectDescriptor, spec: &ApproachSpec) -> [f64; 2] {
    [d.cm_world[0] + spec.offset[0], d.cm_world[1] + spec.offset[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn desc(pl: u32, area: u64, x: f64, y: f64) -> ObjectDescriptor {
        ObjectDescriptor { cm_px: [x, y], cm_world: [x, y], theta: 0.0, area, pl, isotropic: false }
    }

    fn wide_two_link() -> ArmModel {
        let mut m = ArmModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 9.81).unwrap();
        m.q_min = vec![-3.2; 2];
        m.q_max = vec![3.2; 2];
        m
    }

    #[test]
    fn priority_then_area_then_position() {
        let plan = order_objects(&[desc(1, 50, 0.0, 0.0), desc(0, 10, 0.0, 0.0), desc(0, 30, 0.0, 0.0)]);
        let keys: Vec<_> = plan.ordered.iter().map(|d| (d.pl, d.area)).collect();
        assert_eq!(keys, vec![(0, 30), (0, 10), (1, 50)]);

        let plan = order_objects(&[desc(0, 9, 0.3, 0.1), desc(0, 9, 0.1, 0.5), desc(0, 9, 0.1, 0.2)]);
        let xs: Vec<_> = plan.ordered.iter().map(|d| d.cm_world).collect();
        assert_eq!(xs, vec![[0.1, 0.2], [0.1, 0.5], [0.3, 0.1]]);
        assert!(order_objects(&[]).ordered.is_empty());
    }

    #[test]
    fn plan_cursor() {
        let mut plan = order_objects(&[desc(0, 1, 0.0, 0.0)]);
        assert_eq!(plan.remaining(), 1);
        plan.advance();
        assert!(plan.is_done());
        plan.advance();
        assert_eq!(plan.cursor, 1);
    }

    #[test]
    fn ik_fully_extended() {
        let model = wide_two_link();
        let q = solve_ik(&model, [2.0, 0.0], &DVector::from_vec(vec![0.01, -0.01])).unwrap();
        assert!(q.amax() < 1e-3);
        let ee = dynamics::forward_kinematics(&model, &q).unwrap();
        assert!((ee - Vector2::new(2.0, 0.0)).norm() < IK_TOLERANCE);
    }

    #[test]
    fn ik_folded_to_origin() {
        let model = wide_two_link();
        let q = solve_ik(&model, [0.0, 0.0], &DVector::from_vec(vec![0.1, 0.2])).unwrap();
        // closed form: cos q2 = (d² − l1² − l2²)/(2 l1 l2) = −1
        assert_relative_eq!(q[1].abs(), core::f64::consts::PI, epsilon = 1e-6);
    }

    #[test]
    fn ik_unreachable() {
        let model = wide_two_link();
        assert!(matches!(
            solve_ik(&model, [2.5, 0.0], &DVector::zeros(2)),
            Err(PlanningError::Unreachable { .. })
        ));
        let short = ArmModel::new(vec![1.0, 0.3], vec![1.0, 1.0], 9.81).unwrap();
        assert!(matches!(
            solve_ik(&short, [0.2, 0.0], &DVector::zeros(2)),
            Err(PlanningError::Unreachable { .. })
        ));
    }

    #[test]
    fn ik_respects_limits() {
        // Default ±2.8 rad limits cannot fold the elbow to π.
        let model = ArmModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 9.81).unwrap();
        assert_eq!(
            solve_ik(&model, [0.0, 0.0], &DVector::from_vec(vec![0.1, 0.2])),
            Err(PlanningError::LimitsViolated)
        );
    }

    #[test]
    fn trivial_trajectory() {
        let model = wide_two_link();
        let q = DVector::from_vec(vec![0.2, 0.3]);
        let t = plan_trajectory(&model, &q, &q, &MotionLimits::default(), &PlannerConfig::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.duration, 0.0);
    }

    #[test]
    fn single_joint_duration() {
        let model = ArmModel::new(vec![1.0], vec![1.0], 9.81).unwrap();
        let limits = MotionLimits::new(10.0, 0.5).unwrap();
        let t = plan_trajectory(
            &model,
            &DVector::zeros(1),
            &DVector::from_vec(vec![1.0]),
            &limits,
            &PlannerConfig::default(),
        )
        .unwrap();
        assert_relative_eq!(t.duration, 1.25, epsilon = 1e-12);
        assert_eq!(t.waypoints.last().unwrap().q[0], 1.0);
        assert_eq!(t.waypoints[0].q[0], 0.0);
        assert!(t.waypoints.windows(2).all(|w| w[1].t > w[0].t));
        // peak speed reached mid-move
        let mid = t.reference(t.len() / 2);
        assert_relative_eq!(mid.qd[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn outside_limits_rejected() {
        let model = ArmModel::new(vec![1.0], vec![1.0], 9.81).unwrap();
        let r = plan_trajectory(
            &model,
            &DVector::from_vec(vec![3.0]),
            &DVector::zeros(1),
            &MotionLimits::default(),
            &PlannerConfig::default(),
        );
        assert_eq!(r, Err(PlanningError::OutsideLimits { which: "start" }));
    }

    #[test]
    fn preview_flags_bad_waypoints() {
        let model = ArmModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 9.81).unwrap();
        let wp = |t: f64, a: f64, b: f64| Waypoint { t, q: DVector::from_vec(vec![a, b]) };
        let traj = Trajectory {
            waypoints: vec![wp(0.0, 0.0, 0.0), wp(0.1, 0.0, 0.1), wp(0.2, 0.0, 2.9), wp(0.3, 0.0, 2.6)],
            duration: 0.3,
        };
        let report = preview(&model, &traj);
        let pos: Vec<_> = report
            .violations
            .iter()
            .filter(|v| !v.report.position_violations.is_empty())
            .map(|v| v.index)
            .collect();
        assert_eq!(pos, vec![2]);
        let vel: Vec<_> = report
            .violations
            .iter()
            .filter(|v| !v.report.velocity_violations.is_empty())
            .map(|v| v.index)
            .collect();
        assert_eq!(vel, vec![1, 2]);
        assert_eq!(report.summary().velocity_violations, vec![1]);
    }

    #[test]
    fn approach_offsets() {
        let d = desc(0, 1, 0.4, 0.2);
        assert_eq!(approach_target(&d, &ApproachSpec { offset: [0.0, 0.0], hover_epsilon: 0.0 }), [0.4, 0.2]);
        let p = approach_target(&d, &ApproachSpec { offset: [0.0, 0.05], hover_epsilon: 0.0 });
        assert_relative_eq!(p[0], 0.4);
        assert_relative_eq!(p[1], 0.25);
    }
}
