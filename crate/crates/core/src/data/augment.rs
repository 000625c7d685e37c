//! Training-time augmentation and model-input preprocessing.

use super::{AugmentPolicy, DataError, Raster, Sample, DEPTH_RANGE_MM, PRESSURE_MAX, RASTER_SIZE};
use crate::numerics::{Element, Tensor};
use crate::rng::Rng;

/// Which input channels the model is allowed to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModalityMask {
    #[serde(rename = "BOTH")]
    Both,
    #[serde(rename = "DEPTH_ONLY")]
    DepthOnly,
    #[serde(rename = "PSM_ONLY")]
    PsmOnly,
}

impl ModalityMask {
    pub const ALL: [ModalityMask; 3] = [ModalityMask::Both, ModalityMask::DepthOnly, ModalityMask::PsmOnly];

    pub fn tag(self) -> &'static str {
        match self {
            ModalityMask::Both => "both",
            ModalityMask::DepthOnly => "depth",
            ModalityMask::PsmOnly => "psm",
        }
    }
}

/// Augmentation result; joints pushed out of bounds by the spatial map are
/// clamped and counted rather than rejected.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub sample: Sample,
    pub clamped_joints: u32,
}

fn mirror_raster(data: &[f32]) -> Vec<f32> {
    let n = RASTER_SIZE;
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = data[y * n + (n - 1 - x)];
        }
    }
    out
}

/// Horizontal flip: mirror both rasters, mirror x coordinates, swap
/// left/right joint labels. Applying it twice restores the sample exactly.
pub fn hflip_sample(sample: &Sample) -> Sample {
    let depth = mirror_raster(&sample.depth.materialize());
    let pressure = mirror_raster(&sample.pressure.materialize());
    Sample {
        pose: sample.pose.hflip(),
        cover: sample.cover,
        category: sample.category,
        pose_id: sample.pose_id,
        depth: Raster::from_vec(depth).expect("mirrored raster keeps its size"),
        pressure: Raster::from_vec(pressure).expect("mirrored raster keeps its size"),
    }
}

fn bilinear(src: &[f32], x: f64, y: f64) -> f32 {
    let n = RASTER_SIZE as isize;
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let at = |xi: isize, yi: isize| -> f32 {
        if xi < 0 || yi < 0 || xi >= n || yi >= n {
            0.0
        } else {
            src[(yi * n + xi) as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

fn warp_raster(src: &[f32], angle_rad: f64, scale: f64) -> Vec<f32> {
    let n = RASTER_SIZE;
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_rad.sin_cos();
    let inv_s = 1.0 / scale;
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            // Inverse map: un-scale, un-rotate about the image center.
            let dx = (x as f64 - c) * inv_s;
            let dy = (y as f64 - c) * inv_s;
            let sx = c + cos * dx + sin * dy;
            let sy = c - sin * dx + cos * dy;
            out[y * n + x] = bilinear(src, sx, sy);
        }
    }
    out
}

fn warp_joint(p: (f64, f64), angle_rad: f64, scale: f64) -> (f64, f64) {
    let c = (RASTER_SIZE as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_rad.sin_cos();
    let dx = p.0 - c;
    let dy = p.1 - c;
    (
        c + scale * (cos * dx - sin * dy),
        c + scale * (sin * dx + cos * dy),
    )
}

/// Apply the augmentation policy with an explicit seed.
///
/// Draw order is fixed (rotation, scale, occlusion, intensity, flip) so a
/// seed fully determines the transform regardless of policy values.
pub fn augment(sample: &Sample, policy: &AugmentPolicy, rng_seed: u64) -> Result<Augmented, DataError> {
    policy.validate()?;
    let mut rng = Rng::new(rng_seed);
    let angle_deg = rng.range(-policy.max_rotation_deg, policy.max_rotation_deg);
    let scale = 1.0 + rng.range(-policy.max_scale, policy.max_scale);
    let do_occlude = rng.chance(policy.occlusion_prob);
    let occ_area = rng.range(0.10, 0.25);
    let occ_aspect = rng.range(0.5, 2.0);
    let occ_u = rng.uniform();
    let occ_v = rng.uniform();
    let depth_gain = 1.0 + rng.range(-policy.intensity_scale, policy.intensity_scale);
    let pressure_gain = 1.0 + rng.range(-policy.intensity_scale, policy.intensity_scale);
    let do_flip = rng.chance(policy.hflip_prob);

    let mut depth = sample.depth.materialize().to_vec();
    let mut pressure = sample.pressure.materialize().to_vec();
    let mut pose = sample.pose.clone();
    let mut clamped = 0u32;

    let angle_rad = angle_deg.to_radians();
    if angle_rad != 0.0 || scale != 1.0 {
        depth = warp_raster(&depth, angle_rad, scale);
        pressure = warp_raster(&pressure, angle_rad, scale);
        let hi = RASTER_SIZE as f64 - 1.0;
        for joint in pose.joints.iter_mut() {
            let (x, y) = warp_joint(*joint, angle_rad, scale);
            if !(0.0..=hi).contains(&x) || !(0.0..=hi).contains(&y) {
                clamped += 1;
            }
            *joint = (x.clamp(0.0, hi), y.clamp(0.0, hi));
        }
    }

    if do_occlude {
        let n = RASTER_SIZE;
        let area = occ_area * (n * n) as f64;
        let w = ((area * occ_aspect).sqrt().round() as usize).clamp(1, n);
        let h = ((area / w as f64).round() as usize).clamp(1, n);
        let x0 = (occ_u * (n - w) as f64) as usize;
        let y0 = (occ_v * (n - h) as f64) as usize;
        for y in y0..y0 + h {
            let row = y * n;
            depth[row + x0..row + x0 + w].fill(0.0);
            pressure[row + x0..row + x0 + w].fill(0.0);
        }
    }

    if depth_gain != 1.0 || pressure_gain != 1.0 {
        for v in depth.iter_mut() {
            *v = (*v * depth_gain as f32).clamp(0.0, 400.0);
        }
        for v in pressure.iter_mut() {
            *v = (*v * pressure_gain as f32).clamp(0.0, PRESSURE_MAX);
        }
    }

    let mut out = Sample {
        pose,
        cover: sample.cover,
        category: sample.category,
        pose_id: sample.pose_id,
        depth: Raster::from_vec(depth)?,
        pressure: Raster::from_vec(pressure)?,
    };
    if do_flip {
        out = hflip_sample(&out);
    }
    Ok(Augmented { sample: out, clamped_joints: clamped })
}

/// Build the model input: a 224x224x3 tensor with channels
/// `[depth, depth, pressure]`, each scaled to `[0, 1]` by its fixed sensor
/// range, with masked modalities zeroed.
pub fn preprocess<E: Element>(sample: &Sample, modality: ModalityMask) -> Tensor<E> {
    let depth = sample.depth.materialize();
    let pressure = sample.pressure.materialize();
    let n = RASTER_SIZE;
    let mut data = Vec::with_capacity(n * n * 3);
    let (use_depth, use_pressure) = match modality {
        ModalityMask::Both => (true, true),
        ModalityMask::DepthOnly => (true, false),
        ModalityMask::PsmOnly => (false, true),
    };
    for i in 0..n * n {
        let d = if use_depth {
            (depth[i] / DEPTH_RANGE_MM).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let p = if use_pressure {
            (pressure[i] / PRESSURE_MAX).clamp(0.0, 1.0)
        } else {
            0.0
        };
        data.push(E::from_f64(d as f64));
        data.push(E::from_f64(d as f64));
        data.push(E::from_f64(p as f64));
    }
    Tensor::constant(data, &[n, n, 3]).expect("preprocess output is finite and sized")
}

#[cfg(test)]
mod tests {
    use super::super::{generate_pose, render_sample, BodyProfile, Category, Cover, Joint};
    use super::*;

    fn sample() -> Sample {
        let pose = generate_pose(Category::Supine, 41);
        render_sample(&pose, Cover::Thin, 41, BodyProfile::newborn(), Category::Supine, 0).unwrap()
    }

    #[test]
    fn hflip_twice_restores_sample_exactly() {
        let s = sample();
        let back = hflip_sample(&hflip_sample(&s));
        assert_eq!(back.pose, s.pose);
        assert_eq!(back.depth.materialize(), s.depth.materialize());
        assert_eq!(back.pressure.materialize(), s.pressure.materialize());
    }

    #[test]
    fn hflip_mirror_formula_and_label_swap() {
        let mut s = sample();
        s.pose.joints[Joint::WristR as usize] = (50.0, 100.0);
        s.pose.joints[Joint::WristL as usize] = (150.0, 100.0);
        let flipped = hflip_sample(&s);
        assert_eq!(flipped.pose.joint(Joint::WristR), (73.0, 100.0));
        assert_eq!(flipped.pose.joint(Joint::WristL), (173.0, 100.0));
    }

    #[test]
    fn smal_preset_only_rotates_slightly_and_flips() {
        let policy = AugmentPolicy::smal_stage();
        let s = sample();
        let base_depth = s.depth.materialize();
        for seed in 0..50 {
            let mut rng = Rng::new(seed);
            let angle = rng.range(-policy.max_rotation_deg, policy.max_rotation_deg);
            assert!(angle.abs() < 2.0);
            let aug = augment(&s, &policy, seed).unwrap();
            // No occlusion: total mass can only move, not vanish into a hole.
            let sum: f32 = aug.sample.depth.materialize().iter().sum();
            let base: f32 = base_depth.iter().sum();
            assert!((sum - base).abs() / base < 0.05, "seed {seed}: {sum} vs {base}");
        }
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let s = sample();
        let policy = AugmentPolicy::slp_stage();
        let a = augment(&s, &policy, 1234).unwrap();
        let b = augment(&s, &policy, 1234).unwrap();
        assert_eq!(a.sample.pose, b.sample.pose);
        assert_eq!(a.sample.depth.materialize(), b.sample.depth.materialize());
    }

    #[test]
    fn occlusion_zeroes_the_same_rect_in_both_rasters() {
        let s = sample();
        let policy = AugmentPolicy {
            occlusion_prob: 1.0,
            ..AugmentPolicy::none()
        };
        let aug = augment(&s, &policy, 77).unwrap().sample;
        let d = aug.depth.materialize();
        let p = aug.pressure.materialize();
        let zeroed: Vec<usize> = (0..d.len())
            .filter(|&i| d[i] == 0.0 && s.depth.materialize()[i] != 0.0)
            .collect();
        let frac = zeroed.len() as f64 / d.len() as f64;
        assert!(frac > 0.0, "occlusion did not remove anything");
        for &i in zeroed.iter().take(200) {
            assert_eq!(p[i], 0.0);
        }
    }

    #[test]
    fn preprocess_channel_order_and_masks() {
        let mut s = sample();
        // Distinct constant rasters make the channel layout observable.
        s.depth = Raster::from_vec(vec![150.0f32; 224 * 224]).unwrap();
        s.pressure = Raster::from_vec(vec![1.705f32; 224 * 224]).unwrap();
        let t: Tensor<f32> = preprocess(&s, ModalityMask::Both);
        assert_eq!(t.shape(), &[224, 224, 3]);
        let d = t.data();
        assert!((d[0] - 0.5).abs() < 1e-6);
        assert!((d[1] - 0.5).abs() < 1e-6);
        assert!((d[2] - 0.5).abs() < 1e-6);

        let depth_only: Tensor<f32> = preprocess(&s, ModalityMask::DepthOnly);
        assert_eq!(depth_only.data()[2], 0.0);
        assert!(depth_only.data()[0] > 0.0);

        let psm_only: Tensor<f32> = preprocess(&s, ModalityMask::PsmOnly);
        assert_eq!(psm_only.data()[0], 0.0);
        assert_eq!(psm_only.data()[1], 0.0);
        assert!(psm_only.data()[2] > 0.0);
    }

    #[test]
    fn preprocess_all_zero_sample_is_zero_tensor() {
        let mut s = sample();
        s.depth = Raster::from_vec(vec![0.0f32; 224 * 224]).unwrap();
        s.pressure = Raster::from_vec(vec![0.0f32; 224 * 224]).unwrap();
        let t: Tensor<f32> = preprocess(&s, ModalityMask::Both);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
}
