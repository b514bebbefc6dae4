//! Bilateral joint impedance control.
//!
//! The follower (slave) renders a joint-space spring-damper around the leader
//! (master) with exact Coriolis and gravity compensation. The leader receives
//! the follower's external torque one-to-one, plus its own damping term.

use alloc::vec::Vec;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, ArmModel, DynamicsError, JointState};

/// Error magnitude, rad, at which the stiffness term alone reaches the
/// `stiffness_fraction` share of the joint's torque capability.
pub const GAIN_REFERENCE_ERROR: f64 = 0.5;
/// Master damping as a fraction of the follower damping.
pub const MASTER_DAMPING_FRACTION: f64 = 0.1;
pub const DEFAULT_STIFFNESS_FRACTION: f64 = 0.5;
pub const DEFAULT_DAMPING_RATIO: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid gains: {0}")]
    InvalidGains(&'static str),
    #[error("invalid motion limits: {0}")]
    InvalidLimits(&'static str),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    /// Master-side damping.
    pub kdl: Vec<f64>,
}

impl ImpedanceGains {
    pub fn dof(&self) -> usize {
        self.kp.len()
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let n = self.kp.len();
        if n == 0 {
            return Err(ControlError::InvalidGains("empty gain vectors"));
        }
        for len in [self.kd.len(), self.kdl.len()] {
            if len != n {
                return Err(ControlError::DimensionMismatch { expected: n, got: len });
            }
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !(positive(&self.kp) && positive(&self.kd) && positive(&self.kdl)) {
            return Err(ControlError::InvalidGains("all gains must be finite and > 0"));
        }
        Ok(())
    }

    /// Same gains with the damping vector multiplied by `factor`.
    pub fn scaled_damping(&self, factor: f64) -> DVector<f64> {
        DVector::from_iterator(self.kd.len(), self.kd.iter().map(|k| k * factor))
    }
}

/// Operator-adjustable force and speed caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionLimits {
    /// N
    pub max_grip_force: f64,
    /// Fraction of `qd_max`, in (0, 1].
    pub speed_scale: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self { max_grip_force: 20.0, speed_scale: 0.5 }
    }
}

impl MotionLimits {
    pub fn new(max_grip_force: f64, speed_scale: f64) -> Result<Self, ControlError> {
        let limits = Self { max_grip_force, speed_scale };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.max_grip_force.is_finite() && self.max_grip_force > 0.0) {
            return Err(ControlError::InvalidLimits("max_grip_force must be > 0"));
        }
        if !(self.speed_scale > 0.0 && self.speed_scale <= 1.0) {
            return Err(ControlError::InvalidLimits("speed_scale must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Errors and torques of one control evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFrame {
    /// `q_f − q_l`
    #[serde(with = "crate::dvec_serde")]
    pub e_q: DVector<f64>,
    /// `q̇_f − q̇_l`
    #[serde(with = "crate::dvec_serde")]
    pub ed_q: DVector<f64>,
    #[serde(with = "crate::dvec_serde")]
    pub tau_f: DVector<f64>,
    #[serde(with = "crate::dvec_serde")]
    pub tau_l: DVector<f64>,
}

fn check(expected: usize, got: usize) -> Result<(), ControlError> {
    if expected != got {
        Err(ControlError::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Follower torque `τ_f = −Kp·e_q − Kd·ė_q + C(q_f, q̇_f) + g(q_f)`.
pub fn slave_torque(
    gains: &ImpedanceGains,
    model: &ArmModel,
    follower: &JointState,
    leader: &JointState,
) -> Result<ControlFrame, ControlError> {
    let n = model.n;
    check(n, gains.dof())?;
    check(n, follower.dof())?;
    check(n, leader.dof())?;
    check(n, follower.qd.len())?;
    check(n, leader.qd.len())?;

    let e_q = &follower.q - &leader.q;
    let ed_q = &follower.qd - &leader.qd;
    let comp = dynamics::coriolis_torque(model, &follower.q, &follower.qd)?
        + dynamics::gravity_torque(model, &follower.q)?;
    let tau_f = DVector::from_iterator(
        n,
        (0..n).map(|i| -gains.kp[i] * e_q[i] - gains.kd[i] * ed_q[i] + comp[i]),
    );
    Ok(ControlFrame { e_q, ed_q, tau_f, tau_l: DVector::zeros(n) })
}

/// Leader feedback torque `τ_l = τ_ext − K_dl·q̇_l`.
pub fn master_torque(
    gains: &ImpedanceGains,
    tau_ext_follower: &DVector<f64>,
    leader: &JointState,
) -> Result<ControlFrame, ControlError> {
    let n = gains.dof();
    check(n, tau_ext_follower.len())?;
    check(n, leader.dof())?;
    check(n, leader.qd.len())?;
    let tau_l = DVector::from_iterator(
        n,
        (0..n).map(|i| tau_ext_follower[i] - gains.kdl[i] * leader.qd[i]),
    );
    Ok(ControlFrame {
        e_q: DVector::zeros(n),
        ed_q: DVector::zeros(n),
        tau_f: DVector::zeros(n),
        tau_l,
    })
}

/// Gains scaled by each joint's torque capability, critically damped at the
/// home configuration.
pub fn default_gains(
    model: &ArmModel,
    stiffness_fraction: f64,
    damping_ratio: f64,
) -> Result<ImpedanceGains, ControlError> {
    if !(stiffness_fraction > 0.0 && stiffness_fraction <= 1.0) {
        return Err(ControlError::InvalidGains("stiffness_fraction must be in (0, 1]"));
    }
    if !(damping_ratio.is_finite() && damping_ratio > 0.0) {
        return Err(ControlError::InvalidGains("damping_ratio must be > 0"));
    }
    let m_home = dynamics::mass_matrix(model, &model.home())?;
    let kp: Vec<f64> = model
        .tau_max
        .iter()
        .map(|t| stiffness_fraction * t / GAIN_REFERENCE_ERROR)
        .collect();
    let kd: Vec<f64> = kp
        .iter()
        .enumerate()
        .map(|(i, k)| 2.0 * damping_ratio * libm::sqrt(k * m_home[(i, i)]))
        .collect();
    let kdl = kd.iter().map(|k| MASTER_DAMPING_FRACTION * k).collect();
    Ok(ImpedanceGains { kp, kd, kdl })
}

/// Elementwise saturation to `[−tau_max, tau_max]`.
pub fn clamp_torque(model: &ArmModel, tau: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        tau.len(),
        tau.iter().enumerate().map(|(i, t)| match model.tau_max.get(i) {
            Some(max) => t.clamp(-max, *max),
            None => *t,
        }),
    )
}
