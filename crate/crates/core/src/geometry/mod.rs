//! Plane registration: homography estimation and annotation transfer.
//!
//! The RGB, depth, and pressure-mat planes are related by projective
//! transforms. Estimation uses the normalized direct linear transform
//! (Hartley normalization, null vector via an eigendecomposition of the
//! normal matrix) with an optional RANSAC wrapper for contaminated
//! correspondences. All operations are pure and safe to call concurrently.

use serde::{Deserialize, Serialize};

use crate::data::Pose;
use crate::rng::Rng;

/// Sensor plane a set of coordinates lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Plane {
    Rgb,
    Depth,
    Psm,
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Plane::Rgb => "RGB",
            Plane::Depth => "DEPTH",
            Plane::Psm => "PSM",
        };
        f.write_str(name)
    }
}

pub type Point = (f64, f64);

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("point {index} maps to the line at infinity (|w| = {w:.3e})")]
    PerspectiveDivide { index: usize, w: f64 },
    #[error("no consensus set with at least 4 inliers")]
    NoConsensus,
    #[error("pose is in plane {pose}, homography source is {expected}")]
    PlaneMismatch { pose: Plane, expected: Plane },
    #[error("{0}")]
    Invalid(String),
}

type Mat3 = [[f64; 3]; 3];

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat3_det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn mat3_inv(m: &Mat3) -> Option<Mat3> {
    let det = mat3_det(m);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(out)
}

/// 3x3 projective transform, Frobenius-normalized to 1 with the bottom-right
/// entry kept non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Mat3,
}

impl Homography {
    pub fn new(matrix: Mat3) -> Result<Self, GeometryError> {
        let frob: f64 = matrix.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if !frob.is_finite() || frob == 0.0 {
            return Err(GeometryError::Degenerate("zero or non-finite matrix".into()));
        }
        let sign = if matrix[2][2] < 0.0 { -1.0 } else { 1.0 };
        let mut m = matrix;
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v *= sign / frob;
            }
        }
        let h = Homography { matrix: m };
        if mat3_det(&h.matrix).abs() <= 1e-12 {
            return Err(GeometryError::Degenerate(format!(
                "matrix is singular (|det| = {:.3e})",
                mat3_det(&h.matrix).abs()
            )));
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap()
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    /// Row-major flattened matrix, as persisted in calibration files.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.matrix;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, GeometryError> {
        Homography::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = mat3_inv(&self.matrix)
            .ok_or_else(|| GeometryError::Degenerate("matrix not invertible".into()))?;
        Homography::new(inv)
    }

    pub fn compose(&self, inner: &Homography) -> Result<Self, GeometryError> {
        Homography::new(mat3_mul(&self.matrix, &inner.matrix))
    }

    /// Apply to one point with perspective divide.
    pub fn apply(&self, p: Point) -> Result<Point, GeometryError> {
        self.apply_indexed(p, 0)
    }

    fn apply_indexed(&self, p: Point, index: usize) -> Result<Point, GeometryError> {
        let m = &self.matrix;
        let w = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
        if w.abs() < 1e-12 {
            return Err(GeometryError::PerspectiveDivide { index, w });
        }
        let x = (m[0][0] * p.0 + m[0][1] * p.1 + m[0][2]) / w;
        let y = (m[1][0] * p.0 + m[1][1] * p.1 + m[1][2]) / w;
        Ok((x, y))
    }
}

/// Apply a homography to a point list; a point on the line at infinity
/// rejects with its index.
pub fn apply_homography(h: &Homography, points: &[Point]) -> Result<Vec<Point>, GeometryError> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| h.apply_indexed(p, i))
        .collect()
}

/// Hartley normalization: translate the centroid to the origin and scale the
/// mean distance to sqrt(2). Returns the transform and the mapped points.
fn hartley_normalize(points: &[Point]) -> Result<(Mat3, Vec<Point>), GeometryError> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return Err(GeometryError::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]];
    let mapped = points.iter().map(|p| (s * (p.0 - cx), s * (p.1 - cy))).collect();
    Ok((t, mapped))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    (values, v)
}

/// Least-squares homography via the normalized direct linear transform.
pub fn estimate_homography(src: &[Point], dst: &[Point]) -> Result<Homography, GeometryError> {
    if src.len() < 4 || src.len() != dst.len() {
        return Err(GeometryError::TooFewPoints(src.len().min(dst.len())));
    }
    let (t_src, src_n) = hartley_normalize(src)?;
    let (t_dst, dst_n) = hartley_normalize(dst)?;

    // Normal matrix M = A^T A of the 2n x 9 DLT system, built row by row.
    let mut m = vec![vec![0.0f64; 9]; 9];
    let mut accumulate = |row: [f64; 9]| {
        for i in 0..9 {
            if row[i] == 0.0 {
                continue;
            }
            for j in i..9 {
                m[i][j] += row[i] * row[j];
            }
        }
    };
    for (&(x, y), &(u, v)) in src_n.iter().zip(&dst_n) {
        accumulate([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        accumulate([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    for i in 0..9 {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }

    let (values, vectors) = jacobi_eigen(m);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let max_val = values[order[8]].abs().max(1e-300);
    // Two near-zero eigenvalues mean the null space is not unique: the
    // correspondences do not pin down a single homography.
    if values[order[1]].abs() <= 1e-12 * max_val {
        return Err(GeometryError::Degenerate(
            "rank-deficient correspondence set (collinear or repeated points)".into(),
        ));
    }
    let h_vec: Vec<f64> = (0..9).map(|i| vectors[i][order[0]]).collect();
    let h_norm = [
        [h_vec[0], h_vec[1], h_vec[2]],
        [h_vec[3], h_vec[4], h_vec[5]],
        [h_vec[6], h_vec[7], h_vec[8]],
    ];

    let t_dst_inv = mat3_inv(&t_dst)
        .ok_or_else(|| GeometryError::Degenerate("normalization not invertible".into()))?;
    Homography::new(mat3_mul(&mat3_mul(&t_dst_inv, &h_norm), &t_src))
}

fn reprojection_error(h: &Homography, src: Point, dst: Point) -> f64 {
    match h.apply(src) {
        Ok((x, y)) => ((x - dst.0).powi(2) + (y - dst.1).powi(2)).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

fn any_three_collinear(pts: &[Point; 4]) -> bool {
    const EPS: f64 = 1e-9;
    for skip in 0..4 {
        let tri: Vec<Point> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
        let area = (tri[1].0 - tri[0].0) * (tri[2].1 - tri[0].1)
            - (tri[1].1 - tri[0].1) * (tri[2].0 - tri[0].0);
        if area.abs() < EPS {
            return true;
        }
    }
    false
}

/// Robust homography estimation.
///
/// Samples minimal sets, scores by inlier count at `inlier_threshold`
/// reprojection, refits on the best consensus set, and returns the refit
/// model with its inlier mask. Fixed seed, fixed result.
pub fn estimate_homography_ransac(
    src: &[Point],
    dst: &[Point],
    inlier_threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<(Homography, Vec<bool>), GeometryError> {
    if src.len() < 4 || src.len() != dst.len() {
        return Err(GeometryError::TooFewPoints(src.len().min(dst.len())));
    }
    if inlier_threshold <= 0.0 {
        return Err(GeometryError::Invalid(format!(
            "inlier threshold must be positive, got {inlier_threshold}"
        )));
    }
    let n = src.len();
    let mut rng = Rng::new(seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;

    for _ in 0..iterations.max(1) {
        let mut idx = [0usize; 4];
        loop {
            for slot in idx.iter_mut() {
                *slot = rng.below(n);
            }
            if idx[0] != idx[1]
                && idx[0] != idx[2]
                && idx[0] != idx[3]
                && idx[1] != idx[2]
                && idx[1] != idx[3]
                && idx[2] != idx[3]
            {
                break;
            }
        }
        let sample_src = [src[idx[0]], src[idx[1]], src[idx[2]], src[idx[3]]];
        let sample_dst = [dst[idx[0]], dst[idx[1]], dst[idx[2]], dst[idx[3]]];
        if any_three_collinear(&sample_src) || any_three_collinear(&sample_dst) {
            continue;
        }
        let Ok(h) = estimate_homography(&sample_src, &sample_dst) else {
            continue;
        };
        let mut mask = vec![false; n];
        let mut count = 0usize;
        let mut err_sum = 0.0;
        for i in 0..n {
            let e = reprojection_error(&h, src[i], dst[i]);
            if e <= inlier_threshold {
                mask[i] = true;
                count += 1;
                err_sum += e * e;
            }
        }
        let better = match &best {
            None => count >= 4,
            Some((bc, be, _)) => count > *bc || (count == *bc && err_sum < *be),
        };
        if better {
            best = Some((count, err_sum, mask));
        }
    }

    let (_, _, consensus) = best.ok_or(GeometryError::NoConsensus)?;
    let refit_src: Vec<Point> = src
        .iter()
        .zip(&consensus)
        .filter_map(|(&p, &ok)| ok.then_some(p))
        .collect();
    let refit_dst: Vec<Point> = dst
        .iter()
        .zip(&consensus)
        .filter_map(|(&p, &ok)| ok.then_some(p))
        .collect();
    let h = estimate_homography(&refit_src, &refit_dst)?;
    let mask: Vec<bool> = (0..n)
        .map(|i| reprojection_error(&h, src[i], dst[i]) <= inlier_threshold)
        .collect();
    if mask.iter().filter(|&&b| b).count() < 4 {
        return Err(GeometryError::NoConsensus);
    }
    Ok((h, mask))
}

/// Registration result persisted to calibration JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub src_plane: Plane,
    pub dst_plane: Plane,
    /// Homography matrix, 9 reals row-major.
    pub matrix: [f64; 9],
    pub inlier_count: usize,
    pub rms_error: f64,
}

impl Calibration {
    pub fn new(
        src_plane: Plane,
        dst_plane: Plane,
        h: &Homography,
        src: &[Point],
        dst: &[Point],
        mask: &[bool],
    ) -> Self {
        let mut count = 0usize;
        let mut sq_sum = 0.0;
        for i in 0..src.len() {
            if mask.get(i).copied().unwrap_or(false) {
                count += 1;
                sq_sum += reprojection_error(h, src[i], dst[i]).powi(2);
            }
        }
        let rms = if count > 0 { (sq_sum / count as f64).sqrt() } else { 0.0 };
        Calibration {
            src_plane,
            dst_plane,
            matrix: h.to_row_major(),
            inlier_count: count,
            rms_error: rms,
        }
    }

    /// Calibration for an exact, a-priori-known transform (all points inliers).
    pub fn exact(src_plane: Plane, dst_plane: Plane, h: &Homography) -> Self {
        Calibration {
            src_plane,
            dst_plane,
            matrix: h.to_row_major(),
            inlier_count: 0,
            rms_error: 0.0,
        }
    }

    pub fn homography(&self) -> Result<Homography, GeometryError> {
        Homography::from_row_major(&self.matrix)
    }
}

/// Transfer a 14-joint pose across planes through a calibration.
///
/// The pose must live in the calibration's source plane; joint order is
/// preserved and a perspective-divide failure on any joint rejects the whole
/// transfer.
pub fn transfer_pose(pose: &Pose, calib: &Calibration) -> Result<Pose, GeometryError> {
    if pose.plane != calib.src_plane {
        return Err(GeometryError::PlaneMismatch {
            pose: pose.plane,
            expected: calib.src_plane,
        });
    }
    let h = calib.homography()?;
    let mapped = apply_homography(&h, &pose.joints)?;
    let mut joints = [(0.0, 0.0); crate::data::JOINT_COUNT];
    joints.copy_from_slice(&mapped);
    Ok(Pose { joints, plane: calib.dst_plane })
}

/// The registration target drawn on the pressure mat: a 6-by-6 landmark grid
/// with 90 mm spacing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LandmarkGrid {
    pub rows: usize,
    pub cols: usize,
    pub spacing_mm: f64,
    pub plane: Plane,
}

impl LandmarkGrid {
    pub fn standard(plane: Plane) -> Self {
        LandmarkGrid { rows: 6, cols: 6, spacing_mm: 90.0, plane }
    }

    /// Landmark spacing in sensel units.
    pub fn sensel_spacing(&self) -> f64 {
        self.spacing_mm / crate::data::SENSEL_PITCH_MM
    }

    /// Axis-aligned grid points (row-major) with exact sensel spacing,
    /// anchored at `origin`.
    pub fn points(&self, origin: Point) -> Vec<Point> {
        let step = self.sensel_spacing();
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push((origin.0 + c as f64 * step, origin.1 + r as f64 * step));
            }
        }
        out
    }

    /// Grid centered on the 100x100-sensel mat.
    pub fn centered_points(&self) -> Vec<Point> {
        let extent_x = (self.cols - 1) as f64 * self.sensel_spacing();
        let extent_y = (self.rows - 1) as f64 * self.sensel_spacing();
        let mat = crate::data::PSM_SENSELS as f64;
        self.points(((mat - extent_x) / 2.0, (mat - extent_y) / 2.0))
    }
}

#[cfg(test)]
mod tests;
