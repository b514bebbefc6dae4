//! Finite-difference Lagrangian oracle and integrator energy checks.

use nalgebra::DVector;
use proptest::prelude::*;
use teleop_core::dynamics::{self, ArmModel, JointState};

fn two_link() -> ArmModel {
    ArmModel::new(vec![0.5, 0.4], vec![1.2, 0.8], 9.81).unwrap()
}

fn three_link() -> ArmModel {
    ArmModel::new(vec![0.45, 0.35, 0.2], vec![1.5, 1.0, 0.4], 9.81).unwrap()
}

/// Point-mass kinetic and potential energy, written independently of the
/// library's kinematics.
fn lagrangian_terms(model: &ArmModel, q: &[f64], qd: &[f64]) -> (f64, f64) {
    let (mut phi, mut phid) = (0.0, 0.0);
    let (mut y, mut vx, mut vy) = (0.0, 0.0, 0.0);
    let (mut t, mut v) = (0.0, 0.0);
    for i in 0..model.n {
        phi += q[i];
        phid += qd[i];
        let l = model.link_lengths[i];
        y += l * phi.sin();
        vx -= l * phi.sin() * phid;
        vy += l * phi.cos() * phid;
        let m = model.link_masses[i];
        t += 0.5 * m * (vx * vx + vy * vy);
        v += m * model.gravity * y;
    }
    (t, v)
}

fn kinetic(model: &ArmModel, q: &[f64], qd: &[f64]) -> f64 {
    lagrangian_terms(model, q, qd).0
}

fn potential(model: &ArmModel, q: &[f64]) -> f64 {
    lagrangian_terms(model, q, &vec![0.0; q.len()]).1
}

fn shifted(x: &[f64], j: usize, h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[j] += h;
    y
}

/// Five-point central difference of `f` along coordinate `j`.
fn d5(f: &dyn Fn(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> f64 {
    (-f(&shifted(x, j, 2.0 * h)) + 8.0 * f(&shifted(x, j, h)) - 8.0 * f(&shifted(x, j, -h))
        + f(&shifted(x, j, -2.0 * h)))
        / (12.0 * h)
}

/// `∂T/∂q̇_j`. T is quadratic in q̇, so a unit-step central difference is exact.
fn momentum(model: &ArmModel, q: &[f64], qd: &[f64], j: usize) -> f64 {
    (kinetic(model, q, &shifted(qd, j, 1.0)) - kinetic(model, q, &shifted(qd, j, -1.0))) / 2.0
}

/// `C_j = d/dt(∂T/∂q̇_j)|_{q̈=0} − ∂T/∂q_j`.
fn oracle_coriolis(model: &ArmModel, q: &[f64], qd: &[f64]) -> Vec<f64> {
    let h = 1e-4;
    (0..model.n)
        .map(|j| {
            let along = |s: f64| {
                let qs: Vec<f64> = q.iter().zip(qd).map(|(a, b)| a + s * b).collect();
                momentum(model, &qs, qd, j)
            };
            let ddt = (-along(2.0 * h) + 8.0 * along(h) - 8.0 * along(-h) + along(-2.0 * h)) / (12.0 * h);
            let dtdq = d5(&|x: &[f64]| kinetic(model, x, qd), q, j, 1e-5);
            ddt - dtdq
        })
        .collect()
}

fn oracle_gravity(model: &ArmModel, q: &[f64]) -> Vec<f64> {
    (0..model.n).map(|j| d5(&|x: &[f64]| potential(model, x), q, j, 1e-5)).collect()
}

fn max_abs_diff(a: &DVector<f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coriolis_and_gravity_match_lagrangian(
        q in prop::collection::vec(-2.8f64..2.8, 2),
        qd in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let model = two_link();
        let c = dynamics::coriolis_torque(&model, &DVector::from_vec(q.clone()), &DVector::from_vec(qd.clone())).unwrap();
        let g = dynamics::gravity_torque(&model, &DVector::from_vec(q.clone())).unwrap();
        prop_assert!(max_abs_diff(&c, &oracle_coriolis(&model, &q, &qd)) < 1e-6);
        prop_assert!(max_abs_diff(&g, &oracle_gravity(&model, &q)) < 1e-6);
    }

    #[test]
    fn three_link_matches_lagrangian(
        q in prop::collection::vec(-2.2f64..2.2, 3),
        qd in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let model = three_link();
        let c = dynamics::coriolis_torque(&model, &DVector::from_vec(q.clone()), &DVector::from_vec(qd.clone())).unwrap();
        let g = dynamics::gravity_torque(&model, &DVector::from_vec(q.clone())).unwrap();
        prop_assert!(max_abs_diff(&c, &oracle_coriolis(&model, &q, &qd)) < 1e-6);
        prop_assert!(max_abs_diff(&g, &oracle_gravity(&model, &q)) < 1e-6);
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite(q in prop::collection::vec(-3.0f64..3.0, 3)) {
        let m = dynamics::mass_matrix(&three_link(), &DVector::from_vec(q)).unwrap();
        prop_assert_eq!(m.clone(), m.transpose());
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn kinetic_energy_matches_oracle(
        q in prop::collection::vec(-2.8f64..2.8, 2),
        qd in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let model = two_link();
        let s = JointState::new(DVector::from_vec(q.clone()), DVector::from_vec(qd.clone()), DVector::zeros(2)).unwrap();
        let t = dynamics::kinetic_energy(&model, &s).unwrap();
        prop_assert!((t - kinetic(&model, &q, &qd)).abs() < 1e-12);
        prop_assert!(t >= 0.0);
    }
}

#[test]
fn free_pendulum_conserves_energy() {
    let model = two_link();
    let zero = DVector::zeros(2);
    for (q0, qd0) in [([0.3, -0.2], [0.0, 0.0]), ([1.2, 0.9], [0.5, -1.0]), ([-2.0, 2.5], [1.5, 1.5])] {
        let mut s = JointState::new(DVector::from_row_slice(&q0), DVector::from_row_slice(&qd0), zero.clone()).unwrap();
        let e0 = dynamics::total_energy(&model, &s).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            s = dynamics::step(&model, &s, &zero, 1e-3).unwrap();
            worst = worst.max((dynamics::total_energy(&model, &s).unwrap() - e0).abs());
        }
        assert!(worst < 1e-4, "drift {worst} from {q0:?}");
    }
}

#[test]
fn gravity_holds_static_pose() {
    let model = three_link();
    let q = DVector::from_vec(vec![0.4, -0.7, 0.3]);
    let g = dynamics::gravity_torque(&model, &q).unwrap();
    let mut s = JointState::at_rest(q.clone());
    for _ in 0..1000 {
        s = dynamics::step(&model, &s, &g, 1e-3).unwrap();
    }
    assert!((&s.q - &q).amax() < 1e-12);
}
