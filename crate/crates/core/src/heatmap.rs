//! Gaussian joint-heatmap codec.
//!
//! Joint coordinates in the 224-unit plane are encoded as one 56x56 channel
//! per joint: a unit-peak Gaussian centered on the cell containing the
//! joint. Centering on the cell (rather than the fractional coordinate)
//! keeps the peak exactly 1.0, bounds the decode error by half a cell, and
//! makes horizontal-flip equivariance exact on grid-aligned poses.

use crate::data::{Pose, HFLIP_SWAP, JOINT_COUNT, RASTER_SIZE};
use crate::geometry::Plane;
use crate::numerics::{Element, NumericsError, Tensor};

pub const HEATMAP_SIZE: usize = 56;
pub const DOWNSAMPLE: usize = RASTER_SIZE / HEATMAP_SIZE;
pub const DEFAULT_SIGMA: f64 = 1.0;

/// One 56x56 channel per joint, in pose joint order; values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    /// Channel-major storage: `[joint][y][x]`.
    data: Vec<f32>,
    pub size: usize,
    pub downsample: usize,
    pub sigma: f64,
    /// Joints that fell outside the raster and were clamped to the border.
    pub clamped: [bool; JOINT_COUNT],
}

/// Decoded coordinates plus per-joint degenerate-channel flags.
#[derive(Debug, Clone)]
pub struct DecodedPose {
    pub pose: Pose,
    pub low_confidence: [bool; JOINT_COUNT],
}

impl HeatmapStack {
    pub fn value(&self, joint: usize, y: usize, x: usize) -> f32 {
        self.data[(joint * self.size + y) * self.size + x]
    }

    pub fn channel(&self, joint: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[joint * n..(joint + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Target tensor `[14, 56, 56]` for heatmap regression.
    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        let data = self.data.iter().map(|&v| E::from_f64(v as f64)).collect();
        Tensor::constant(data, &[JOINT_COUNT, self.size, self.size])
            .expect("heatmap values are finite")
    }

    /// Wrap a predicted `[14, 56, 56]` tensor for decoding.
    pub fn from_tensor<E: Element>(t: &Tensor<E>) -> Result<Self, NumericsError> {
        if t.shape() != [JOINT_COUNT, HEATMAP_SIZE, HEATMAP_SIZE] {
            return Err(NumericsError::Invalid {
                op: "heatmap_from_tensor",
                msg: format!("expected [14, 56, 56], got {:?}", t.shape()),
            });
        }
        Ok(HeatmapStack {
            data: t.data().iter().map(|v| v.to_f64() as f32).collect(),
            size: HEATMAP_SIZE,
            downsample: DOWNSAMPLE,
            sigma: DEFAULT_SIGMA,
            clamped: [false; JOINT_COUNT],
        })
    }

    /// Channel-swapped horizontal mirror (the heatmap image of a flipped
    /// pose).
    pub fn hflip(&self) -> HeatmapStack {
        let s = self.size;
        let mut data = vec![0.0f32; self.data.len()];
        for (dst_j, &src_j) in HFLIP_SWAP.iter().enumerate() {
            for y in 0..s {
                for x in 0..s {
                    data[(dst_j * s + y) * s + x] = self.value(src_j, y, s - 1 - x);
                }
            }
        }
        let mut clamped = [false; JOINT_COUNT];
        for (dst_j, &src_j) in HFLIP_SWAP.iter().enumerate() {
            clamped[dst_j] = self.clamped[src_j];
        }
        HeatmapStack { data, size: s, downsample: self.downsample, sigma: self.sigma, clamped }
    }
}

/// Encode a pose as Gaussian heatmap targets (56-cell grid, sigma in cells).
pub fn encode(pose: &Pose) -> HeatmapStack {
    encode_with(pose, HEATMAP_SIZE, DEFAULT_SIGMA)
}

pub fn encode_with(pose: &Pose, size: usize, sigma: f64) -> HeatmapStack {
    let down = RASTER_SIZE / size;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = vec![0.0f32; JOINT_COUNT * size * size];
    let mut clamped = [false; JOINT_COUNT];
    for (j, &(x, y)) in pose.joints.iter().enumerate() {
        let out_of_bounds = !(0.0..RASTER_SIZE as f64).contains(&x)
            || !(0.0..RASTER_SIZE as f64).contains(&y);
        clamped[j] = out_of_bounds;
        let cx = ((x / down as f64).floor() as isize).clamp(0, size as isize - 1);
        let cy = ((y / down as f64).floor() as isize).clamp(0, size as isize - 1);
        let base = j * size * size;
        for gy in 0..size {
            let dy = gy as isize - cy;
            for gx in 0..size {
                let dx = gx as isize - cx;
                let d2 = (dx * dx + dy * dy) as f64;
                data[base + gy * size + gx] = (-d2 * inv).exp() as f32;
            }
        }
    }
    HeatmapStack { data, size, downsample: down, sigma, clamped }
}

/// Decode per-channel argmax coordinates back to the 224-unit plane.
///
/// Ties break toward the lowest row-major index; a constant (all-equal)
/// channel decodes to the image center and is flagged low-confidence.
pub fn decode(maps: &HeatmapStack) -> DecodedPose {
    let s = maps.size;
    let down = maps.downsample as f64;
    let mut joints = [(0.0, 0.0); JOINT_COUNT];
    let mut low_confidence = [false; JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        let channel = maps.channel(j);
        let mut best = 0usize;
        let mut best_v = channel[0];
        let mut min_v = channel[0];
        for (i, &v) in channel.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
            if v < min_v {
                min_v = v;
            }
        }
        if best_v == min_v {
            joints[j] = (RASTER_SIZE as f64 / 2.0, RASTER_SIZE as f64 / 2.0);
            low_confidence[j] = true;
        } else {
            let (cy, cx) = (best / s, best % s);
            joints[j] = ((cx as f64 + 0.5) * down, (cy as f64 + 0.5) * down);
        }
    }
    DecodedPose { pose: Pose { joints, plane: Plane::Psm }, low_confidence }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_pose, Category, Joint};
    use crate::rng::Rng;

    fn pose_at(coords: [(f64, f64); JOINT_COUNT]) -> Pose {
        Pose { joints: coords, plane: Plane::Psm }
    }

    fn spread_pose() -> Pose {
        // Distinct in-bounds locations for all 14 joints.
        let mut joints = [(0.0, 0.0); JOINT_COUNT];
        for (i, j) in joints.iter_mut().enumerate() {
            *j = (20.0 + 14.0 * i as f64, 30.0 + 9.0 * i as f64);
        }
        pose_at(joints)
    }

    #[test]
    fn joint_at_100_60_peaks_at_cell_25_15() {
        let mut pose = spread_pose();
        pose.joints[0] = (100.0, 60.0);
        let maps = encode(&pose);
        let ch = maps.channel(0);
        let argmax = ch
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!((argmax % 56, argmax / 56), (25, 15));
        assert_eq!(maps.value(0, 15, 25), 1.0);
    }

    #[test]
    fn channel_mass_approximates_gaussian_integral() {
        let pose = spread_pose();
        let maps = encode(&pose);
        let expect = 2.0 * std::f64::consts::PI; // sigma = 1
        for j in 0..JOINT_COUNT {
            let sum: f64 = maps.channel(j).iter().map(|&v| v as f64).sum();
            assert!(
                (sum - expect).abs() / expect < 0.01,
                "joint {j}: mass {sum} vs {expect}"
            );
        }
    }

    #[test]
    fn identical_joints_identical_channels() {
        let mut pose = spread_pose();
        pose.joints[Joint::WristR as usize] = (77.0, 91.0);
        pose.joints[Joint::WristL as usize] = (77.0, 91.0);
        let maps = encode(&pose);
        assert_eq!(maps.channel(Joint::WristR as usize), maps.channel(Joint::WristL as usize));
    }

    #[test]
    fn impulse_decodes_to_cell_center() {
        let mut maps = encode(&spread_pose());
        let s = maps.size;
        maps.data.iter_mut().for_each(|v| *v = 0.0);
        maps.data[(0 * s + 20) * s + 10] = 1.0; // joint 0, cell (x=10, y=20)
        for j in 1..JOINT_COUNT {
            maps.data[(j * s + 5) * s + 5] = 1.0;
        }
        let decoded = decode(&maps);
        assert_eq!(decoded.pose.joints[0], (42.0, 82.0));
        assert!(!decoded.low_confidence[0]);
    }

    #[test]
    fn uniform_channel_decodes_to_center_with_flag() {
        let mut maps = encode(&spread_pose());
        let s = maps.size;
        for v in maps.data[..s * s].iter_mut() {
            *v = 0.25;
        }
        let decoded = decode(&maps);
        assert_eq!(decoded.pose.joints[0], (112.0, 112.0));
        assert!(decoded.low_confidence[0]);
        assert!(!decoded.low_confidence[1]);
    }

    #[test]
    fn round_trip_error_bounded_by_half_cell() {
        let bound = 2.0 * std::f64::consts::SQRT_2 + 1e-9;
        let mut worst = 0.0f64;
        for seed in 0..1000 {
            let pose = generate_pose(Category::ALL[(seed % 3) as usize], 50_000 + seed);
            let decoded = decode(&encode(&pose));
            for (d, g) in decoded.pose.joints.iter().zip(pose.joints.iter()) {
                let err = ((d.0 - g.0).powi(2) + (d.1 - g.1).powi(2)).sqrt();
                worst = worst.max(err);
                assert!(err <= bound, "seed {seed}: error {err}");
            }
        }
        // The bound must actually be approached, otherwise it tests nothing.
        assert!(worst > 1.0, "suspiciously small worst error {worst}");
    }

    #[test]
    fn hflip_equivariance_exact_on_grid_aligned_poses() {
        let mut rng = Rng::new(9);
        for _ in 0..50 {
            let mut joints = [(0.0, 0.0); JOINT_COUNT];
            for j in joints.iter_mut() {
                *j = (4.0 * rng.below(56) as f64, 4.0 * rng.below(56) as f64);
            }
            let pose = pose_at(joints);
            let flipped_encoding = encode(&pose.hflip());
            let mirrored = encode(&pose).hflip();
            assert_eq!(flipped_encoding.data(), mirrored.data());
        }
    }

    #[test]
    fn peak_value_strictly_decreases_with_distance() {
        let mut pose = spread_pose();
        pose.joints[0] = (112.0, 112.0);
        let maps = encode(&pose);
        let center = (28usize, 28usize);
        let mut by_dist: Vec<(i64, f32)> = Vec::new();
        for y in 0..56 {
            for x in 0..56 {
                let d2 = (x as i64 - center.0 as i64).pow(2) + (y as i64 - center.1 as i64).pow(2);
                by_dist.push((d2, maps.value(0, y, x)));
            }
        }
        by_dist.sort_by_key(|&(d2, _)| d2);
        for pair in by_dist.windows(2) {
            if pair[1].0 > pair[0].0 {
                assert!(pair[1].1 < pair[0].1 || (pair[1].1 == 0.0 && pair[0].1 == 0.0));
            } else {
                assert_eq!(pair[1].1, pair[0].1);
            }
        }
        assert_eq!(maps.value(0, 28, 28), 1.0);
    }

    #[test]
    fn out_of_bounds_joint_clamps_to_border_and_flags() {
        let mut pose = spread_pose();
        pose.joints[3] = (-10.0, 500.0);
        let maps = encode(&pose);
        assert!(maps.clamped[3]);
        assert_eq!(maps.value(3, 55, 0), 1.0);
        let decoded = decode(&maps);
        assert_eq!(decoded.pose.joints[3], (2.0, 222.0));
    }

    #[test]
    fn all_values_in_unit_interval_with_unit_peak() {
        let pose = spread_pose();
        let maps = encode(&pose);
        assert!(maps.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for j in 0..JOINT_COUNT {
            let max = maps.channel(j).iter().cloned().fold(0.0f32, f32::max);
            assert_eq!(max, 1.0);
        }
    }
}
