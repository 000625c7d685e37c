use super::*;
use crate::data::{Category, JOINT_COUNT};

fn max_reproj(h: &Homography, src: &[Point], dst: &[Point]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(&s, &d)| reprojection_error(h, s, d))
        .fold(0.0, f64::max)
}

fn random_projective(rng: &mut Rng) -> Homography {
    // Mild perspective so grid points stay well away from the line at infinity.
    let m = [
        [rng.range(0.8, 1.2), rng.range(-0.2, 0.2), rng.range(-20.0, 20.0)],
        [rng.range(-0.2, 0.2), rng.range(0.8, 1.2), rng.range(-20.0, 20.0)],
        [rng.range(-1e-3, 1e-3), rng.range(-1e-3, 1e-3), 1.0],
    ];
    Homography::new(m).unwrap()
}

#[test]
fn four_fixed_points_give_identity() {
    let pts = vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
    let h = estimate_homography(&pts, &pts).unwrap();
    let id = Homography::identity();
    for (a, b) in h.to_row_major().iter().zip(id.to_row_major()) {
        assert!((a - b).abs() < 1e-10, "{:?}", h.matrix());
    }
}

#[test]
fn pure_translation_recovered() {
    let grid = LandmarkGrid::standard(Plane::Psm);
    let src = grid.centered_points();
    let dst: Vec<Point> = src.iter().map(|p| (p.0 + 10.0, p.1 + 5.0)).collect();
    let h = estimate_homography(&src, &dst).unwrap();
    let expect = Homography::new([[1.0, 0.0, 10.0], [0.0, 1.0, 5.0], [0.0, 0.0, 1.0]]).unwrap();
    for (a, b) in h.to_row_major().iter().zip(expect.to_row_major()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn synthesize_then_recover_on_landmark_grid() {
    let grid = LandmarkGrid::standard(Plane::Psm);
    let src = grid.centered_points();
    assert_eq!(src.len(), 36);
    let mut rng = Rng::new(404);
    for _ in 0..20 {
        let truth = random_projective(&mut rng);
        let dst = apply_homography(&truth, &src).unwrap();
        let h = estimate_homography(&src, &dst).unwrap();
        assert!(max_reproj(&h, &src, &dst) < 1e-8);
    }
}

#[test]
fn too_few_points_rejected() {
    let pts = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
    assert!(matches!(
        estimate_homography(&pts, &pts),
        Err(GeometryError::TooFewPoints(3))
    ));
}

#[test]
fn collinear_points_rejected_with_diagnostic() {
    let src: Vec<Point> = (0..6).map(|i| (i as f64, 2.0 * i as f64)).collect();
    let dst: Vec<Point> = (0..6).map(|i| (i as f64 + 1.0, 2.0 * i as f64)).collect();
    match estimate_homography(&src, &dst) {
        Err(GeometryError::Degenerate(msg)) => assert!(msg.contains("rank"), "{msg}"),
        other => panic!("expected degenerate, got {other:?}"),
    }
}

#[test]
fn ransac_all_inliers_matches_plain_dlt() {
    let grid = LandmarkGrid::standard(Plane::Psm);
    let src = grid.centered_points();
    let truth = Homography::new([[1.1, 0.02, 4.0], [0.0, 0.95, -2.0], [1e-4, 0.0, 1.0]]).unwrap();
    let dst = apply_homography(&truth, &src).unwrap();
    let (h, mask) = estimate_homography_ransac(&src, &dst, 1.0, 500, 7).unwrap();
    assert!(mask.iter().all(|&b| b));
    let plain = estimate_homography(&src, &dst).unwrap();
    for (a, b) in h.to_row_major().iter().zip(plain.to_row_major()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn ransac_recovers_under_30_percent_outliers() {
    let grid = LandmarkGrid::standard(Plane::Psm);
    let src = grid.centered_points();
    let truth = random_projective(&mut Rng::new(99));
    let clean = apply_homography(&truth, &src).unwrap();
    let n_outliers = 11; // leaves 25 clean correspondences of 36

    let mut rng = Rng::new(31);
    let mut dst = clean.clone();
    let mut corrupt: Vec<usize> = (0..36).collect();
    rng.shuffle(&mut corrupt);
    for &i in corrupt.iter().take(n_outliers) {
        dst[i] = (rng.range(0.0, 100.0), rng.range(0.0, 100.0));
    }
    let (h, mask) = estimate_homography_ransac(&src, &dst, 1.0, 2000, 5).unwrap();

    // Oracle: fit on the known-clean subset and compare reprojections.
    let clean_idx: Vec<usize> = corrupt[n_outliers..].to_vec();
    let oracle_src: Vec<Point> = clean_idx.iter().map(|&i| src[i]).collect();
    let oracle_dst: Vec<Point> = clean_idx.iter().map(|&i| dst[i]).collect();
    let oracle = estimate_homography(&oracle_src, &oracle_dst).unwrap();
    assert!(max_reproj(&oracle, &oracle_src, &oracle_dst) < 1e-8);

    for &i in &clean_idx {
        assert!(mask[i], "clean point {i} not marked inlier");
        assert!(reprojection_error(&h, src[i], dst[i]) < 1.0);
    }
}

#[test]
fn ransac_requires_four_points() {
    let pts = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
    assert!(matches!(
        estimate_homography_ransac(&pts, &pts, 1.0, 100, 1),
        Err(GeometryError::TooFewPoints(3))
    ));
}

#[test]
fn ransac_fixed_seed_fixed_mask() {
    let grid = LandmarkGrid::standard(Plane::Psm);
    let src = grid.centered_points();
    let truth = random_projective(&mut Rng::new(1));
    let mut dst = apply_homography(&truth, &src).unwrap();
    let mut rng = Rng::new(8);
    for i in 0..8 {
        dst[i * 4] = (rng.range(0.0, 100.0), rng.range(0.0, 100.0));
    }
    let (h1, m1) = estimate_homography_ransac(&src, &dst, 1.0, 800, 77).unwrap();
    let (h2, m2) = estimate_homography_ransac(&src, &dst, 1.0, 800, 77).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(h1.to_row_major(), h2.to_row_major());
}

#[test]
fn apply_identity_and_translation() {
    let id = Homography::identity();
    let pts = vec![(3.5, -2.0), (0.0, 0.0)];
    for (out, p) in apply_homography(&id, &pts).unwrap().iter().zip(&pts) {
        assert!((out.0 - p.0).abs() < 1e-12 && (out.1 - p.1).abs() < 1e-12);
    }

    let t = Homography::new([[1.0, 0.0, 10.0], [0.0, 1.0, 5.0], [0.0, 0.0, 1.0]]).unwrap();
    let mapped = t.apply((0.0, 0.0)).unwrap();
    assert!((mapped.0 - 10.0).abs() < 1e-12 && (mapped.1 - 5.0).abs() < 1e-12);
}

#[test]
fn composition_matches_sequential_application() {
    let mut rng = Rng::new(55);
    let h1 = random_projective(&mut rng);
    let h2 = random_projective(&mut rng);
    let composed = h1.compose(&h2).unwrap();
    for _ in 0..50 {
        let p = (rng.range(0.0, 100.0), rng.range(0.0, 100.0));
        let two_step = h1.apply(h2.apply(p).unwrap()).unwrap();
        let one_step = composed.apply(p).unwrap();
        assert!((two_step.0 - one_step.0).abs() < 1e-8);
        assert!((two_step.1 - one_step.1).abs() < 1e-8);
    }
}

#[test]
fn perspective_divide_failure_is_per_point() {
    let h = Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, -5.0]]).unwrap();
    // w = x - 5 vanishes at x = 5.
    let err = apply_homography(&h, &[(0.0, 0.0), (5.0, 1.0)]).unwrap_err();
    assert!(matches!(err, GeometryError::PerspectiveDivide { index: 1, .. }));
    assert!(apply_homography(&h, &[(0.0, 0.0)]).is_ok());
}

#[test]
fn scale_invariance_of_homography() {
    let m = [[1.2, 0.1, 3.0], [0.0, 0.9, -1.0], [1e-4, 2e-4, 1.0]];
    let scaled = m.map(|row| row.map(|v| v * -3.7));
    let h1 = Homography::new(m).unwrap();
    let h2 = Homography::new(scaled).unwrap();
    let mut rng = Rng::new(12);
    for _ in 0..20 {
        let p = (rng.range(0.0, 100.0), rng.range(0.0, 100.0));
        let a = h1.apply(p).unwrap();
        let b = h2.apply(p).unwrap();
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    }
}

fn sample_pose(plane: Plane) -> Pose {
    crate::data::generate_pose(Category::Supine, 3).into_plane(plane)
}

#[test]
fn transfer_identity_changes_only_plane() {
    let pose = sample_pose(Plane::Rgb);
    let calib = Calibration::exact(Plane::Rgb, Plane::Psm, &Homography::identity());
    let out = transfer_pose(&pose, &calib).unwrap();
    assert_eq!(out.plane, Plane::Psm);
    for (o, p) in out.joints.iter().zip(pose.joints.iter()) {
        assert!((o.0 - p.0).abs() < 1e-12 && (o.1 - p.1).abs() < 1e-12);
    }
}

#[test]
fn transfer_scale_doubles_coordinates() {
    let pose = sample_pose(Plane::Rgb);
    let h = Homography::new([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let calib = Calibration::exact(Plane::Rgb, Plane::Psm, &h);
    let out = transfer_pose(&pose, &calib).unwrap();
    for (o, p) in out.joints.iter().zip(pose.joints.iter()) {
        assert!((o.0 - 2.0 * p.0).abs() < 1e-9);
        assert!((o.1 - 2.0 * p.1).abs() < 1e-9);
    }
}

#[test]
fn transfer_plane_mismatch_rejected() {
    let pose = sample_pose(Plane::Depth);
    let calib = Calibration::exact(Plane::Rgb, Plane::Psm, &Homography::identity());
    assert!(matches!(
        transfer_pose(&pose, &calib),
        Err(GeometryError::PlaneMismatch { .. })
    ));
}

#[test]
fn transfer_matches_direct_ground_truth() {
    // Generator emits the pose in the PSM plane; mapping it backwards through
    // H^-1 gives the RGB-plane annotation, and transferring forward must land
    // on the original coordinates.
    let psm_pose = sample_pose(Plane::Psm);
    let h = random_projective(&mut Rng::new(2024));
    let inv = h.inverse().unwrap();
    let rgb_joints = apply_homography(&inv, &psm_pose.joints).unwrap();
    let mut rgb_pose = psm_pose.clone();
    rgb_pose.plane = Plane::Rgb;
    rgb_pose.joints.copy_from_slice(&rgb_joints);

    let calib = Calibration::exact(Plane::Rgb, Plane::Psm, &h);
    let out = transfer_pose(&rgb_pose, &calib).unwrap();
    for (o, t) in out.joints.iter().zip(psm_pose.joints.iter()) {
        assert!((o.0 - t.0).abs() < 1e-6 && (o.1 - t.1).abs() < 1e-6);
    }
}

#[test]
fn transfer_round_trip_restores_coordinates() {
    let pose = sample_pose(Plane::Psm);
    let h = random_projective(&mut Rng::new(86));
    let fwd = Calibration::exact(Plane::Psm, Plane::Depth, &h);
    let back = Calibration::exact(Plane::Depth, Plane::Psm, &h.inverse().unwrap());
    let there = transfer_pose(&pose, &fwd).unwrap();
    let home = transfer_pose(&there, &back).unwrap();
    for (a, b) in home.joints.iter().zip(pose.joints.iter()) {
        assert!((a.0 - b.0).abs() < 1e-5 && (a.1 - b.1).abs() < 1e-5);
    }
}

#[test]
fn landmark_grid_spacing_in_sensels() {
    let grid = LandmarkGrid::standard(Plane::Psm);
    assert!((grid.sensel_spacing() - 90.0 / 5.08).abs() < 1e-12);
    let pts = grid.centered_points();
    assert_eq!(pts.len(), 36);
    // Consecutive columns differ by exactly the sensel spacing.
    assert!((pts[1].0 - pts[0].0 - grid.sensel_spacing()).abs() < 1e-12);
    assert!((pts[6].1 - pts[0].1 - grid.sensel_spacing()).abs() < 1e-12);
}

#[test]
fn calibration_json_round_trip() {
    let h = Homography::new([[1.1, 0.0, 3.0], [0.0, 0.9, 1.0], [0.0, 0.0, 1.0]]).unwrap();
    let grid = LandmarkGrid::standard(Plane::Psm).centered_points();
    let dst = apply_homography(&h, &grid).unwrap();
    let mask = vec![true; grid.len()];
    let calib = Calibration::new(Plane::Rgb, Plane::Psm, &h, &grid, &dst, &mask);
    assert_eq!(calib.inlier_count, 36);
    assert!(calib.rms_error < 1e-9);

    let json = serde_json::to_string(&calib).unwrap();
    assert!(json.contains("\"src_plane\":\"RGB\""));
    let parsed: Calibration = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.matrix, calib.matrix);
    assert_eq!(parsed.dst_plane, Plane::Psm);
}

#[test]
fn pose_has_fourteen_joints() {
    assert_eq!(JOINT_COUNT, 14);
}
