//! Cluster statistics over binary segmentation masks.
//!
//! Pixels are points at integer `(row, col)` coordinates. Image axes map to
//! `x = col`, `y = row` before any angle is computed, and orientations are
//! reported modulo π in `[0, π)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative eigenvalue gap under which a cluster counts as isotropic.
pub const ISOTROPY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("mask {index} has no object pixels")]
    EmptyMask { index: usize },
    #[error("malformed mask at line {line}: {reason}")]
    MalformedMask { line: usize, reason: String },
    #[error("malformed index at line {line}: {reason}")]
    MalformedIndex { line: usize, reason: String },
    #[error("calibration linear part is singular")]
    SingularCalibration,
    #[error("mask dimensions must be at least 1x1")]
    EmptyGrid,
}

/// A binary object mask with its disassembly priority level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
    pub pl: u32,
}

impl Mask {
    pub fn empty(rows: usize, cols: usize, pl: u32) -> Result<Self, PerceptionError> {
        if rows == 0 || cols == 0 {
            return Err(PerceptionError::EmptyGrid);
        }
        Ok(Self { rows, cols, cells: alloc::vec![false; rows * cols], pl })
    }

    pub fn from_rows(grid: &[Vec<bool>], pl: u32) -> Result<Self, PerceptionError> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        let mut mask = Self::empty(rows, cols, pl)?;
        for (r, row) in grid.iter().enumerate() {
            if row.len() != cols {
                return Err(PerceptionError::MalformedMask {
                    line: r + 1,
                    reason: format!("expected {cols} cells, found {}", row.len()),
                });
            }
            for (c, v) in row.iter().enumerate() {
                mask.set(r, c, *v);
            }
        }
        Ok(mask)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.cols + col] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    /// Object pixels as `(row, col)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(k, _)| (k / self.cols, k % self.cols))
    }

    /// Plain-text grid: one row per line of `'0'`/`'1'`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(if self.get(r, c) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Parses the plain-text grid format. Whitespace is ignored; blank lines
    /// are skipped. `line` numbers in errors are 1-based.
    pub fn parse_text(text: &str, pl: u32) -> Result<Self, PerceptionError> {
        let mut grid: Vec<Vec<bool>> = Vec::new();
        let mut width: Option<usize> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let mut row = Vec::new();
            for ch in raw.chars() {
                match ch {
                    '0' => row.push(false),
                    '1' => row.push(true),
                    c if c.is_whitespace() => {}
                    c => {
                        return Err(PerceptionError::MalformedMask {
                            line,
                            reason: format!("unexpected character {c:?}"),
                        })
                    }
                }
            }
            if row.is_empty() {
                continue;
            }
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(PerceptionError::MalformedMask {
                        line,
                        reason: format!("ragged row: expected {w} cells, found {}", row.len()),
                    })
                }
                Some(_) => {}
            }
            grid.push(row);
        }
        if grid.is_empty() {
            return Err(PerceptionError::MalformedMask { line: 0, reason: "no rows".into() });
        }
        Self::from_rows(&grid, pl)
    }
}

/// One entry of a mask index: file name and priority level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub pl: u32,
}

/// Parses `masks.idx`: lines of `<filename> <pL>`. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_index(text: &str) -> Result<Vec<IndexEntry>, PerceptionError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let file = parts.next().unwrap_or_default();
        let pl = parts.next().ok_or_else(|| PerceptionError::MalformedIndex {
            line,
            reason: format!("missing priority level for {file}"),
        })?;
        let pl = pl.parse::<u32>().map_err(|_| PerceptionError::MalformedIndex {
            line,
            reason: format!("priority level {pl:?} is not a non-negative integer"),
        })?;
        if parts.next().is_some() {
            return Err(PerceptionError::MalformedIndex { line, reason: "trailing fields".into() });
        }
        entries.push(IndexEntry { file: file.into(), pl });
    }
    Ok(entries)
}

pub fn format_index(entries: &[IndexEntry]) -> String {
    entries.iter().map(|e| format!("{} {}\n", e.file, e.pl)).collect()
}

/// Per-object cluster statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAnalysis {
    /// `(row, col)` object pixels.
    pub coords: Vec<(usize, usize)>,
    pub area: usize,
    /// `(x, y)` = `(col, row)` mean, pixels.
    pub cm_px: [f64; 2],
    /// Coordinates minus centroid, `(x, y)`.
    pub centered: Vec<[f64; 2]>,
    /// Population covariance in `(x, y)`, px².
    pub covariance: Matrix2<f64>,
    /// `(λ₁, λ₂)` with `λ₁ ≥ λ₂`.
    pub eigenvalues: (f64, f64),
    pub major_axis: Vector2<f64>,
    pub theta: f64,
    pub isotropic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    pub cm_px: [f64; 2],
    pub cm_world: [f64; 2],
    pub theta: f64,
    pub area: u64,
    pub pl: u32,
    pub isotropic: bool,
}

/// Affine pixel → world map, `world = A · (x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub affine: [[f64; 3]; 2],
}

impl Calibration {
    pub fn new(affine: [[f64; 3]; 2]) -> Result<Self, PerceptionError> {
        let calib = Self { affine };
        calib.validate()?;
        Ok(calib)
    }

    pub fn identity() -> Self {
        Self { affine: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn scale(s: f64) -> Self {
        Self { affine: [[s, 0.0, 0.0], [0.0, s, 0.0]] }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let det = self.linear().determinant();
        if !det.is_finite() || det.abs() < 1e-15 || self.affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PerceptionError::SingularCalibration);
        }
        Ok(())
    }

    pub fn linear(&self) -> Matrix2<f64> {
        let a = &self.affine;
        Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1])
    }

    pub fn apply(&self, px: [f64; 2]) -> [f64; 2] {
        let a = &self.affine;
        [
            a[0][0] * px[0] + a[0][1] * px[1] + a[0][2],
            a[1][0] * px[0] + a[1][1] * px[1] + a[1][2],
        ]
    }
}

/// Folds an angle into `[0, π)`.
pub fn normalize_axis_angle(theta: f64) -> f64 {
    let mut t = libm::fmod(theta, PI);
    if t < 0.0 {
        t += PI;
    }
    if t >= PI {
        t = 0.0;
    }
    t
}

/// Closed-form eigen decomposition of a symmetric 2×2 matrix. Returns
/// `(λ₁, λ₂, v₁)` with `λ₁ ≥ λ₂` and `v₁` the unit eigenvector of `λ₁`.
pub fn eigen2x2(cv: &Matrix2<f64>) -> (f64, f64, Vector2<f64>) {
    let a = cv[(0, 0)];
    let b = 0.5 * (cv[(0, 1)] + cv[(1, 0)]);
    let c = cv[(1, 1)];
    let mean = 0.5 * (a + c);
    // sqrt(tr² − 4 det) / 2, expanded to avoid cancellation
    let half_gap = libm::hypot(0.5 * (a - c), b);
    let l1 = mean + half_gap;
    let l2 = mean - half_gap;

    let v = if b == 0.0 {
        if a >= c {
            Vector2::new(1.0, 0.0)
        } else {
            Vector2::new(0.0, 1.0)
        }
    } else {
        // Both rows of (CV − λ₁I) give a null vector; take the better conditioned one.
        let r1 = Vector2::new(b, l1 - a);
        let r2 = Vector2::new(l1 - c, b);
        if r1.norm_squared() >= r2.norm_squared() {
            r1
        } else {
            r2
        }
    };
    let norm = v.norm();
    let v = if norm > 0.0 { v / norm } else { Vector2::new(1.0, 0.0) };
    (l1, l2, v)
}

/// Area, centroid, covariance and principal axis of one mask.
pub fn analyze(mask: &Mask) -> Result<ClusterAnalysis, PerceptionError> {
    let coords: Vec<(usize, usize)> = mask.pixels().collect();
    let area = coords.len();
    if area == 0 {
        return Err(PerceptionError::EmptyMask { index: 0 });
    }
    let a = area as f64;
    let (sx, sy) = coords
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (r, c)| (sx + *c as f64, sy + *r as f64));
    let cm = [sx / a, sy / a];

    let centered: Vec<[f64; 2]> = coords
        .iter()
        .map(|(r, c)| [*c as f64 - cm[0], *r as f64 - cm[1]])
        .collect();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for [dx, dy] in &centered {
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let covariance = Matrix2::new(sxx / a, sxy / a, sxy / a, syy / a);

    let (l1, l2, v1) = eigen2x2(&covariance);
    let isotropic = l1 - l2 <= ISOTROPY_TOLERANCE * l1.max(1.0);
    let (major_axis, theta) = if isotropic {
        (Vector2::new(1.0, 0.0), 0.0)
    } else {
        (v1, normalize_axis_angle(libm::atan2(v1.y, v1.x)))
    };

    Ok(ClusterAnalysis {
        coords,
        area,
        cm_px: cm,
        centered,
        covariance,
        eigenvalues: (l1, l2),
        major_axis,
        theta,
        isotropic,
    })
}

impl ClusterAnalysis {
    pub fn descriptor(&self, pl: u32) -> ObjectDescriptor {
        ObjectDescriptor {
            cm_px: self.cm_px,
            cm_world: self.cm_px,
            theta: self.theta,
            area: self.area as u64,
            pl,
            isotropic: self.isotropic,
        }
    }
}

/// How pixel centroids are turned into world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorldMapping {
    Calibrated(Calibration),
    /// Meters per pixel.
    Scale(f64),
}

/// Analyzes every mask, preserving input order.
pub fn analyze_all(masks: &[Mask], mapping: WorldMapping) -> Result<Vec<ObjectDescriptor>, PerceptionError> {
    masks
        .iter()
        .enumerate()
        .map(|(index, mask)| {
            let analysis = analyze(mask).map_err(|e| match e {
                PerceptionError::EmptyMask { .. } => PerceptionError::EmptyMask { index },
                other => other,
            })?;
            let d = analysis.descriptor(mask.pl);
            Ok(match mapping {
                WorldMapping::Calibrated(calib) => to_world(&d, &calib),
                WorldMapping::Scale(s) => ObjectDescriptor { cm_world: [d.cm_px[0] * s, d.cm_px[1] * s], ..d },
            })
        })
        .collect()
}

/// Maps the centroid through the calibration and carries the axis direction
/// through its linear part.
pub fn to_world(d: &ObjectDescriptor, calib: &Calibration) -> ObjectDescriptor {
    let cm_world = calib.apply(d.cm_px);
    let theta = if d.isotropic {
        d.theta
    } else {
        let dir = calib.linear() * Vector2::new(libm::cos(d.theta), libm::sin(d.theta));
        normalize_axis_angle(libm::atan2(dir.y, dir.x))
    };
    ObjectDescriptor { cm_world, theta, ..*d }
}

/// Rasterizes a filled rectangle of `length × width` pixels centred at
/// `center = (x, y)` whose long side makes angle `angle` with the `x` axis.
pub fn rasterize_rect(
    rows: usize,
    cols: usize,
    center: [f64; 2],
    length: f64,
    width: f64,
    angle: f64,
    pl: u32,
) -> Result<Mask, PerceptionError> {
    let mut mask = Mask::empty(rows, cols, pl)?;
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let (hl, hw) = (0.5 * length, 0.5 * width);
    for r in 0..rows {
        for col in 0..cols {
            let dx = col as f64 - center[0];
            let dy = r as f64 - center[1];
            let along = dx * c + dy * s;
            let across = -dx * s + dy * c;
            if along.abs() <= hl && across.abs() <= hw {
                mask.set(r, col, true);
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn mask_with(rows: usize, cols: usize, pixels: &[(usize, usize)]) -> Mask {
        let mut m = Mask::empty(rows, cols, 0).unwrap();
        for (r, c) in pixels {
            m.set(*r, *c, true);
        }
        m
    }

    #[test]
    fn single_pixel() {
        let a = analyze(&mask_with(6, 8, &[(3, 5)])).unwrap();
        assert_eq!(a.area, 1);
        assert_eq!(a.cm_px, [5.0, 3.0]);
        assert_eq!(a.covariance, Matrix2::zeros());
        assert!(a.isotropic);
        assert_eq!(a.theta, 0.0);
    }

    #[test]
    fn horizontal_strip() {
        let a = analyze(&mask_with(1, 3, &[(0, 0), (0, 1), (0, 2)])).unwrap();
        assert_relative_eq!(a.covariance, Matrix2::new(2.0 / 3.0, 0.0, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(a.theta, 0.0);
        assert!(!a.isotropic);
    }

    #[test]
    fn diagonal_pixels() {
        let a = analyze(&mask_with(3, 3, &[(0, 0), (1, 1), (2, 2)])).unwrap();
        let t = 2.0 / 3.0;
        assert_relative_eq!(a.covariance, Matrix2::new(t, t, t, t), epsilon = 1e-15);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(a.major_axis.x.abs(), s, epsilon = 1e-12);
        assert_relative_eq!(a.major_axis.x, a.major_axis.y, epsilon = 1e-12);
        assert_relative_eq!(a.theta, core::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn filled_rectangle() {
        let mut pixels = Vec::new();
        for r in 0..3 {
            for c in 0..5 {
                pixels.push((r + 2, c + 1));
            }
        }
        let a = analyze(&mask_with(8, 8, &pixels)).unwrap();
        assert_eq!(a.area, 15);
        assert_eq!(a.cm_px, [3.0, 3.0]);
        assert_relative_eq!(a.covariance[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(a.covariance[(1, 1)], 2.0 / 3.0, epsilon = 1e-14);
        assert_eq!(a.theta, 0.0);
    }

    #[test]
    fn empty_mask_rejected() {
        let m = Mask::empty(3, 3, 0).unwrap();
        assert_eq!(analyze(&m), Err(PerceptionError::EmptyMask { index: 0 }));
        let good = mask_with(3, 3, &[(1, 1)]);
        let err = analyze_all(&[good.clone(), good, m], WorldMapping::Scale(1.0)).unwrap_err();
        assert_eq!(err, PerceptionError::EmptyMask { index: 2 });
    }

    #[test]
    fn analyze_all_preserves_order_and_independence() {
        assert!(analyze_all(&[], WorldMapping::Scale(1.0)).unwrap().is_empty());
        let a = rasterize_rect(20, 20, [5.0, 5.0], 6.0, 2.0, 0.0, 1).unwrap();
        let b = rasterize_rect(20, 20, [14.0, 12.0], 8.0, 4.0, 1.0, 0).unwrap();
        let both = analyze_all(&[a.clone(), b.clone()], WorldMapping::Scale(0.01)).unwrap();
        let only_b = analyze_all(&[b], WorldMapping::Scale(0.01)).unwrap();
        assert_eq!(both[1], only_b[0]);
        assert_eq!(both[0].pl, 1);
        assert_relative_eq!(both[0].cm_world[0], both[0].cm_px[0] * 0.01);
    }

    #[test]
    fn eigen_simple_cases() {
        let (l1, l2, _) = eigen2x2(&Matrix2::identity());
        assert_eq!((l1, l2), (1.0, 1.0));
        let (l1, l2, v) = eigen2x2(&Matrix2::new(2.0, 0.0, 0.0, 1.0));
        assert_eq!((l1, l2), (2.0, 1.0));
        assert_eq!(v.x.abs(), 1.0);
        assert_eq!(v.y, 0.0);
        let (l1, _, v) = eigen2x2(&Matrix2::new(1.0, 0.0, 0.0, 3.0));
        assert_eq!(l1, 3.0);
        assert_eq!(v, Vector2::new(0.0, 1.0));
    }

    #[test]
    fn world_mapping() {
        let d = ObjectDescriptor {
            cm_px: [100.0, 200.0],
            cm_world: [0.0, 0.0],
            theta: 0.3,
            area: 10,
            pl: 0,
            isotropic: false,
        };
        let w = to_world(&d, &Calibration::identity());
        assert_eq!(w.cm_world, [100.0, 200.0]);
        assert_relative_eq!(w.theta, 0.3, epsilon = 1e-15);
        let w = to_world(&d, &Calibration::scale(0.001));
        assert_relative_eq!(w.cm_world[0], 0.1);
        assert_relative_eq!(w.cm_world[1], 0.2);

        let rot = Calibration::new([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let w = to_world(&d, &rot);
        assert_relative_eq!(w.theta, 0.3 + core::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        let d2 = ObjectDescriptor { theta: 2.0, ..d };
        assert_relative_eq!(to_world(&d2, &rot).theta, 2.0 + core::f64::consts::FRAC_PI_2 - PI, epsilon = 1e-12);
        assert!(Calibration::new([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]).is_err());
    }

    #[test]
    fn text_format() {
        let m = Mask::parse_text("0110\n0110\n\n", 3).unwrap();
        assert_eq!((m.rows(), m.cols(), m.pl, m.count()), (2, 4, 3, 4));
        assert_eq!(Mask::parse_text(&m.to_text(), 3).unwrap(), m);
        assert_eq!(Mask::parse_text("01 1\r\n011\n", 0).unwrap().cols(), 3);

        match Mask::parse_text("011\n01\n", 0) {
            Err(PerceptionError::MalformedMask { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match Mask::parse_text("011\n0x1\n", 0) {
            Err(PerceptionError::MalformedMask { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_format() {
        let idx = parse_index("# objects\nbolt_0.txt 0\n\ncover.txt 1\n").unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx[1], IndexEntry { file: "cover.txt".into(), pl: 1 });
        assert_eq!(parse_index(&format_index(&idx)).unwrap(), idx);
        assert!(matches!(parse_index("a.txt\n"), Err(PerceptionError::MalformedIndex { line: 1, .. })));
        assert!(matches!(parse_index("a.txt 0\nb.txt -1\n"), Err(PerceptionError::MalformedIndex { line: 2, .. })));
    }

    #[test]
    fn axis_angle_normalization() {
        assert_eq!(normalize_axis_angle(PI), 0.0);
        assert_relative_eq!(normalize_axis_angle(-0.25), PI - 0.25);
        assert_eq!(normalize_axis_angle(-1e-18), 0.0);
        let v = vec![0.1, 1.0, 2.5];
        for t in v {
            assert_relative_eq!(normalize_axis_angle(t - PI), normalize_axis_angle(t), epsilon = 1e-12);
        }
    }
}
