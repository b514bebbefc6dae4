use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::perception::{self, analyze, eigen2x2, rasterize_rect, Mask};

fn random_mask(rng: &mut ChaCha8Rng) -> Mask {
    let rows = rng.random_range(1..40);
    let cols = rng.random_range(1..40);
    let density = rng.random_range(0.02..0.9);
    let mut m = Mask::empty(rows, cols, 0).unwrap();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(density) {
                m.set(r, c, true);
            }
        }
    }
    if m.count() == 0 {
        m.set(rows / 2, cols / 2, true);
    }
    m
}

fn axis_error_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d).to_degrees()
}

#[test]
fn centroid_and_area_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let mask = random_mask(&mut rng);
        let (mut area, mut sx, mut sy) = (0u64, 0u64, 0u64);
        for r in 0..mask.rows() {
            for c in 0..mask.cols() {
                if mask.get(r, c) {
                    area += 1;
                    sx += c as u64;
                    sy += r as u64;
                }
            }
        }
        let a = analyze(&mask).unwrap();
        assert_eq!(a.area as u64, area);
        assert_eq!(a.cm_px, [sx as f64 / area as f64, sy as f64 / area as f64]);
    }
}

#[test]
fn eigen_residual_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let mask = random_mask(&mut rng);
        let a = analyze(&mask).unwrap();
        let (l1, l2, v) = eigen2x2(&a.covariance);
        assert!(l1 >= l2);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert!((a.covariance * v - v * l1).norm() < 1e-10);
    }
    for _ in 0..1000 {
        let (p, q, r) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let cv = Matrix2::new(p, q, q, r);
        let (l1, _, v) = eigen2x2(&cv);
        assert!((cv * v - v * l1).norm() < 1e-10);
    }
}

#[test]
fn rotated_rectangle_orientation() {
    for k in 1..=17 {
        let angle = (10.0 * k as f64).to_radians();
        let mask = rasterize_rect(80, 80, [40.0, 40.0], 40.0, 12.0, angle, 0).unwrap();
        let a = analyze(&mask).unwrap();
        let err = axis_error_deg(a.theta, angle);
        assert!(err < 2.0, "{}°: theta {}° err {err}", 10 * k, a.theta.to_degrees());
    }
}

#[test]
fn orientation_invariant_under_translation_and_scale() {
    for deg in [15.0f64, 60.0, 135.0] {
        let angle = deg.to_radians();
        let base = analyze(&rasterize_rect(120, 120, [40.0, 40.0], 40.0, 12.0, angle, 0).unwrap()).unwrap();
        let moved = analyze(&rasterize_rect(120, 120, [70.0, 65.0], 40.0, 12.0, angle, 0).unwrap()).unwrap();
        let big = analyze(&rasterize_rect(120, 120, [60.0, 60.0], 80.0, 24.0, angle, 0).unwrap()).unwrap();
        assert_eq!(base.theta, moved.theta);
        assert!(axis_error_deg(base.theta, big.theta) < 1.0);
    }
}

#[test]
fn text_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let mask = random_mask(&mut rng);
        let back = Mask::parse_text(&mask.to_text(), 0).unwrap();
        assert_eq!(back, mask);
        assert_eq!(analyze(&back).unwrap(), analyze(&mask).unwrap());
    }
}

#[test]
fn theta_stays_in_half_open_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..500 {
        let a = analyze(&random_mask(&mut rng)).unwrap();
        assert!((0.0..std::f64::consts::PI).contains(&a.theta));
        assert_eq!(perception::normalize_axis_angle(a.theta), a.theta);
    }
}
