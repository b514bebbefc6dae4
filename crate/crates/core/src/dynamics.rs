//! Planar serial-chain rigid-body dynamics.
//!
//! Each link `i` carries a point mass `m_i` at its tip. Absolute link angles are
//! the running sums of the joint angles, gravity acts along world `-y`, and all
//! terms (mass matrix, Coriolis/centrifugal torque, gravity torque) are exact
//! closed forms of that model.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default joint position bound, rad.
pub const DEFAULT_Q_LIMIT: f64 = 2.8;
/// Default joint speed bound, rad/s.
pub const DEFAULT_QD_MAX: f64 = 2.0;
/// Default joint torque bound, N·m.
pub const DEFAULT_TAU_MAX: f64 = 50.0;
/// Default integration step, s.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("mass matrix is not positive definite")]
    SingularMass,
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("invalid arm model: {0}")]
    InvalidModel(&'static str),
}

/// Kinematic and dynamic parameters of one planar arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    pub n: usize,
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    pub gravity: f64,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qd_max: Vec<f64>,
    pub tau_max: Vec<f64>,
}

impl ArmModel {
    /// Builds a model with the default joint, speed and torque limits.
    pub fn new(
        link_lengths: Vec<f64>,
        link_masses: Vec<f64>,
        gravity: f64,
    ) -> Result<Self, DynamicsError> {
        let n = link_lengths.len();
        let model = Self {
            n,
            link_lengths,
            link_masses,
            gravity,
            q_min: vec![-DEFAULT_Q_LIMIT; n],
            q_max: vec![DEFAULT_Q_LIMIT; n],
            qd_max: vec![DEFAULT_QD_MAX; n],
            tau_max: vec![DEFAULT_TAU_MAX; n],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.n;
        if n == 0 {
            return Err(DynamicsError::InvalidModel("joint count must be at least 1"));
        }
        for len in [
            self.link_lengths.len(),
            self.link_masses.len(),
            self.q_min.len(),
            self.q_max.len(),
            self.qd_max.len(),
            self.tau_max.len(),
        ] {
            if len != n {
                return Err(DynamicsError::DimensionMismatch { expected: n, got: len });
            }
        }
        if !self.gravity.is_finite() {
            return Err(DynamicsError::NonFinite("gravity"));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.link_lengths) {
            return Err(DynamicsError::InvalidModel("link lengths must be > 0"));
        }
        if !positive(&self.link_masses) {
            return Err(DynamicsError::InvalidModel("link masses must be > 0"));
        }
        if !positive(&self.qd_max) {
            return Err(DynamicsError::InvalidModel("qd_max must be > 0"));
        }
        if !positive(&self.tau_max) {
            return Err(DynamicsError::InvalidModel("tau_max must be > 0"));
        }
        if self
            .q_min
            .iter()
            .zip(&self.q_max)
            .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(DynamicsError::InvalidModel("q_min must be < q_max"));
        }
        Ok(())
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Configuration used as the reference pose for gain synthesis.
    pub fn home(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n,
            self.q_min
                .iter()
                .zip(&self.q_max)
                .map(|(lo, hi)| 0.0_f64.clamp(*lo, *hi)),
        )
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<(), DynamicsError> {
        if v.len() != self.n {
            Err(DynamicsError::DimensionMismatch { expected: self.n, got: v.len() })
        } else {
            Ok(())
        }
    }
}

/// Positions, velocities and external torques of one arm at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    #[serde(with = "crate::dvec_serde")]
    pub q: DVector<f64>,
    #[serde(with = "crate::dvec_serde")]
    pub qd: DVector<f64>,
    #[serde(with = "crate::dvec_serde")]
    pub tau_ext: DVector<f64>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, qd: DVector::zeros(n), tau_ext: DVector::zeros(n) }
    }

    pub fn new(q: DVector<f64>, qd: DVector<f64>, tau_ext: DVector<f64>) -> Result<Self, DynamicsError> {
        let state = Self { q, qd, tau_ext };
        state.validate()?;
        Ok(state)
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.q.len();
        if n == 0 {
            return Err(DynamicsError::DimensionMismatch { expected: 1, got: 0 });
        }
        for len in [self.qd.len(), self.tau_ext.len()] {
            if len != n {
                return Err(DynamicsError::DimensionMismatch { expected: n, got: len });
            }
        }
        if !all_finite(&self.q) {
            return Err(DynamicsError::NonFinite("q"));
        }
        if !all_finite(&self.qd) {
            return Err(DynamicsError::NonFinite("qd"));
        }
        if !all_finite(&self.tau_ext) {
            return Err(DynamicsError::NonFinite("tau_ext"));
        }
        Ok(())
    }
}

pub(crate) fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Absolute link angles (cumulative joint sums).
fn link_angles(q: &DVector<f64>) -> Vec<f64> {
    let mut acc = 0.0;
    q.iter()
        .map(|qi| {
            acc += qi;
            acc
        })
        .collect()
}

/// Tip position of every link.
pub fn link_tips(model: &ArmModel, q: &DVector<f64>) -> Result<Vec<Vector2<f64>>, DynamicsError> {
    model.check_len(q)?;
    let phi = link_angles(q);
    let mut p = Vector2::zeros();
    Ok(phi
        .iter()
        .zip(&model.link_lengths)
        .map(|(a, l)| {
            p += Vector2::new(l * libm::cos(*a), l * libm::sin(*a));
            p
        })
        .collect())
}

/// End-effector position in the world frame.
pub fn forward_kinematics(model: &ArmModel, q: &DVector<f64>) -> Result<Vector2<f64>, DynamicsError> {
    let tips = link_tips(model, q)?;
    Ok(tips[model.n - 1])
}

/// Jacobian (2×n) of the tip of link `link` with respect to the joint angles.
fn point_jacobian(model: &ArmModel, phi: &[f64], link: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(2, model.n);
    for j in 0..=link {
        let (mut dx, mut dy) = (0.0, 0.0);
        for (l, p) in model.link_lengths[j..=link].iter().zip(&phi[j..=link]) {
            dx -= l * libm::sin(*p);
            dy += l * libm::cos(*p);
        }
        jac[(0, j)] = dx;
        jac[(1, j)] = dy;
    }
    jac
}

/// End-effector Jacobian (2×n).
pub fn jacobian(model: &ArmModel, q: &DVector<f64>) -> Result<DMatrix<f64>, DynamicsError> {
    model.check_len(q)?;
    Ok(point_jacobian(model, &link_angles(q), model.n - 1))
}

/// Joint-space mass matrix `M(q) = Σ m_i J_iᵀ J_i`.
pub fn mass_matrix(model: &ArmModel, q: &DVector<f64>) -> Result<DMatrix<f64>, DynamicsError> {
    model.check_len(q)?;
    let phi = link_angles(q);
    let mut m = DMatrix::zeros(model.n, model.n);
    for i in 0..model.n {
        let jac = point_jacobian(model, &phi, i);
        m += model.link_masses[i] * jac.transpose() * jac;
    }
    // Symmetric by construction up to round-off; make it exact.
    let sym = (&m + m.transpose()) * 0.5;
    Ok(sym)
}

/// Coriolis and centrifugal torque `Σ m_i J_iᵀ (J̇_i q̇)`.
pub fn coriolis_torque(
    model: &ArmModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    model.check_len(q)?;
    model.check_len(qd)?;
    let phi = link_angles(q);
    let phid = link_angles(qd);
    let mut tau = DVector::zeros(model.n);
    let mut accel = Vector2::zeros();
    for i in 0..model.n {
        // velocity-product acceleration of tip i: -Σ_{k≤i} l_k φ̇_k² (cos φ_k, sin φ_k)
        let w2 = phid[i] * phid[i];
        accel -= Vector2::new(
            model.link_lengths[i] * w2 * libm::cos(phi[i]),
            model.link_lengths[i] * w2 * libm::sin(phi[i]),
        );
        let jac = point_jacobian(model, &phi, i);
        tau += model.link_masses[i] * jac.transpose() * accel;
    }
    Ok(tau)
}

/// Gravity torque, the gradient of the potential energy.
pub fn gravity_torque(model: &ArmModel, q: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    model.check_len(q)?;
    let phi = link_angles(q);
    let mut tau = DVector::zeros(model.n);
    for i in 0..model.n {
        let jac = point_jacobian(model, &phi, i);
        for j in 0..model.n {
            tau[j] += model.link_masses[i] * model.gravity * jac[(1, j)];
        }
    }
    Ok(tau)
}

pub fn kinetic_energy(model: &ArmModel, state: &JointState) -> Result<f64, DynamicsError> {
    let m = mass_matrix(model, &state.q)?;
    model.check_len(&state.qd)?;
    Ok(0.5 * state.qd.dot(&(m * &state.qd)))
}

pub fn potential_energy(model: &ArmModel, q: &DVector<f64>) -> Result<f64, DynamicsError> {
    let tips = link_tips(model, q)?;
    Ok(tips
        .iter()
        .zip(&model.link_masses)
        .map(|(p, m)| m * model.gravity * p.y)
        .sum())
}

pub fn total_energy(model: &ArmModel, state: &JointState) -> Result<f64, DynamicsError> {
    Ok(kinetic_energy(model, state)? + potential_energy(model, &state.q)?)
}

/// Joint acceleration from `M q̈ = τ_cmd + τ_ext − C − g`.
pub fn forward_dynamics(
    model: &ArmModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    model.check_len(tau)?;
    let m = mass_matrix(model, q)?;
    let rhs = tau - coriolis_torque(model, q, qd)? - gravity_torque(model, q)?;
    let chol = m.cholesky().ok_or(DynamicsError::SingularMass)?;
    Ok(chol.solve(&rhs))
}

/// One fixed-step RK4 step. `tau_cmd` and `state.tau_ext` are held constant
/// over the step; the returned state carries the same `tau_ext`.
pub fn step(
    model: &ArmModel,
    state: &JointState,
    tau_cmd: &DVector<f64>,
    dt: f64,
) -> Result<JointState, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::BadTimeStep(dt));
    }
    model.check_len(&state.q)?;
    state.validate()?;
    model.check_len(tau_cmd)?;
    if !all_finite(tau_cmd) {
        return Err(DynamicsError::NonFinite("tau_cmd"));
    }
    let tau = tau_cmd + &state.tau_ext;
    let accel = |q: &DVector<f64>, qd: &DVector<f64>| forward_dynamics(model, q, qd, &tau);

    let q0 = &state.q;
    let v0 = &state.qd;
    let a1 = accel(q0, v0)?;
    let q2 = q0 + v0 * (0.5 * dt);
    let v2 = v0 + &a1 * (0.5 * dt);
    let a2 = accel(&q2, &v2)?;
    let q3 = q0 + &v2 * (0.5 * dt);
    let v3 = v0 + &a2 * (0.5 * dt);
    let a3 = accel(&q3, &v3)?;
    let q4 = q0 + &v3 * dt;
    let v4 = v0 + &a3 * dt;
    let a4 = accel(&q4, &v4)?;

    let q = q0 + (v0 + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
    let qd = v0 + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    if !all_finite(&q) || !all_finite(&qd) {
        return Err(DynamicsError::NonFinite("integrated state"));
    }
    Ok(JointState { q, qd, tau_ext: state.tau_ext.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitReport {
    pub position_violations: Vec<(usize, Bound)>,
    pub velocity_violations: Vec<usize>,
}

impl LimitReport {
    pub fn is_empty(&self) -> bool {
        self.position_violations.is_empty() && self.velocity_violations.is_empty()
    }
}

/// Closed-interval limit check on positions and speeds.
pub fn check_limits(model: &ArmModel, state: &JointState) -> LimitReport {
    let mut report = LimitReport::default();
    for i in 0..model.n.min(state.q.len()) {
        let q = state.q[i];
        if q < model.q_min[i] {
            report.position_violations.push((i, Bound::Lower));
        } else if q > model.q_max[i] {
            report.position_violations.push((i, Bound::Upper));
        }
    }
    for i in 0..model.n.min(state.qd.len()) {
        if state.qd[i].abs() > model.qd_max[i] {
            report.velocity_violations.push(i);
        }
    }
    report
}

/// Clamps positions into `[q_min, q_max]` and speeds into `[-qd_max, qd_max]`.
pub fn clamp_state(model: &ArmModel, state: &JointState) -> JointState {
    let mut out = state.clone();
    for i in 0..model.n.min(state.q.len()) {
        out.q[i] = state.q[i].clamp(model.q_min[i], model.q_max[i]);
        out.qd[i] = state.qd[i].clamp(-model.qd_max[i], model.qd_max[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_link() -> ArmModel {
        ArmModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 9.81).unwrap()
    }

    #[test]
    fn single_link_mass_is_ml2() {
        let model = ArmModel::new(vec![1.0], vec![1.0], 9.81).unwrap();
        for q in [-2.0, 0.0, 0.7] {
            let m = mass_matrix(&model, &DVector::from_vec(vec![q])).unwrap();
            assert_relative_eq!(m[(0, 0)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_link_mass_at_zero() {
        let m = mass_matrix(&two_link(), &DVector::zeros(2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 1.0]);
        assert_relative_eq!(m, expected, epsilon = 1e-14);
    }

    #[test]
    fn coriolis_zero_at_rest_and_single_link() {
        let model = two_link();
        let q = DVector::from_vec(vec![0.3, -1.2]);
        let c = coriolis_torque(&model, &q, &DVector::zeros(2)).unwrap();
        assert_eq!(c, DVector::zeros(2));

        let one = ArmModel::new(vec![0.5], vec![2.0], 9.81).unwrap();
        let c = coriolis_torque(&one, &DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![3.0])).unwrap();
        assert_relative_eq!(c[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gravity_single_link_horizontal() {
        let model = ArmModel::new(vec![1.0], vec![1.0], 9.81).unwrap();
        let g = gravity_torque(&model, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(g[0], 9.81, epsilon = 1e-12);
        let zero_g = ArmModel::new(vec![1.0, 1.0], vec![1.0, 1.0], 0.0).unwrap();
        let g = gravity_torque(&zero_g, &DVector::from_vec(vec![0.4, 0.2])).unwrap();
        assert_eq!(g, DVector::zeros(2));
    }

    #[test]
    fn step_holds_compensated_rest_state() {
        let model = two_link();
        let state = JointState::at_rest(DVector::from_vec(vec![0.4, -0.9]));
        let tau = coriolis_torque(&model, &state.q, &state.qd).unwrap()
            + gravity_torque(&model, &state.q).unwrap();
        let next = step(&model, &state, &tau, 1e-3).unwrap();
        assert_relative_eq!(next.q, state.q, epsilon = 1e-15);
        assert_relative_eq!(next.qd, state.qd, epsilon = 1e-12);
    }

    #[test]
    fn step_constant_torque_single_link() {
        let model = ArmModel::new(vec![1.0], vec![1.0], 0.0).unwrap();
        let mut state = JointState::at_rest(DVector::zeros(1));
        let tau = DVector::from_vec(vec![1.0]);
        for _ in 0..1000 {
            state = step(&model, &state, &tau, 1e-3).unwrap();
        }
        assert_relative_eq!(state.qd[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(state.q[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let model = two_link();
        let state = JointState::at_rest(DVector::zeros(2));
        assert!(matches!(step(&model, &state, &DVector::zeros(2), 0.0), Err(DynamicsError::BadTimeStep(_))));
        assert!(matches!(
            step(&model, &state, &DVector::zeros(3), 1e-3),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
        let tau = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(step(&model, &state, &tau, 1e-3), Err(DynamicsError::NonFinite(_))));
    }

    #[test]
    fn limits_closed_interval() {
        let model = ArmModel::new(vec![0.4, 0.3, 0.2], vec![1.0; 3], 9.81).unwrap();
        let inside = JointState::at_rest(DVector::from_vec(vec![0.1, -0.5, 1.0]));
        assert!(check_limits(&model, &inside).is_empty());

        let mut over = inside.clone();
        over.q[2] = model.q_max[2] + 0.01;
        let report = check_limits(&model, &over);
        assert_eq!(report.position_violations, vec![(2, Bound::Upper)]);
        assert!(report.velocity_violations.is_empty());

        let boundary = JointState::at_rest(DVector::from_vec(model.q_max.clone()));
        assert!(check_limits(&model, &boundary).is_empty());

        let mut fast = inside;
        fast.qd[0] = -2.5;
        assert_eq!(check_limits(&model, &fast).velocity_violations, vec![0]);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ArmModel::new(vec![], vec![], 9.81).is_err());
        assert!(ArmModel::new(vec![1.0, -1.0], vec![1.0, 1.0], 9.81).is_err());
        assert!(ArmModel::new(vec![1.0], vec![0.0], 9.81).is_err());
        let mut m = two_link();
        m.q_min[0] = 3.0;
        assert!(m.validate().is_err());
    }
}
