//! Deterministic synthetic sample generation.
//!
//! Poses come from a small kinematic skeleton model (segment lengths at
//! newborn scale, joint angles sampled inside anatomical ranges, posture
//! category biasing the lateral geometry). Rendering turns a pose into a
//! depth heightfield of capsule-shaped limbs over a flat mattress plus a
//! mass-weighted contact-pressure map, with the cover condition applied as a
//! smoothing/dilation of the heightfield only.

use super::{
    Category, Cover, DataError, Dataset, DatasetManifest, Pose, Raster, RasterKind, Sample,
    Source, JOINT_COUNT, RASTER_SIZE, SENSEL_PITCH_MM, UNITS_PER_SENSEL,
};
use crate::geometry::Plane;
use crate::rng::{derive_seed, Rng};

/// Raster units per millimetre on the newborn-scale mat.
pub(crate) const MM_TO_UNITS: f64 = UNITS_PER_SENSEL / SENSEL_PITCH_MM;
const MM_PER_UNIT: f64 = 1.0 / MM_TO_UNITS;

// Skeleton segment lengths, millimetres at newborn scale.
const TORSO_MM: f64 = 130.0;
const HEAD_MM: f64 = 100.0;
const SHOULDER_HALF_MM: f64 = 55.0;
const HIP_HALF_MM: f64 = 45.0;
const THIGH_MM: f64 = 90.0;
const SHANK_MM: f64 = 85.0;
const UPPER_ARM_MM: f64 = 75.0;
const FOREARM_MM: f64 = 70.0;

/// Generator angle bounds (radians); tests derive their assertions from these.
pub(crate) const MAX_TORSO_TILT: f64 = 15.0 * DEG;
pub(crate) const MAX_SUPINE_ROLL: f64 = 10.0 * DEG;
pub(crate) const LATERAL_SHIFT_MM: f64 = 15.0;
const DEG: f64 = std::f64::consts::PI / 180.0;

#[cfg(test)]
pub(crate) const SHOULDER_HALF_UNITS: f64 = SHOULDER_HALF_MM * MM_TO_UNITS;
#[cfg(test)]
pub(crate) const TORSO_UNITS: f64 = TORSO_MM * MM_TO_UNITS;

const BOUNDS_MARGIN: f64 = 6.0;
const RESAMPLE_CAP: usize = 1000;

// Rendering constants.
const THIN_SIGMA_UNITS: f64 = 2.0;
/// Smoothing applied to the thick-cover heightfield, exported for the
/// dilation-dominance check.
pub const THICK_SIGMA_UNITS: f64 = 4.5;
const DILATE_RADIUS_UNITS: usize = 5;
const BLANKET_MM: f32 = 5.0;
/// Bound on the uniform depth sensor noise, in millimetres (before body
/// scaling); the dominance test uses it as its noise floor.
pub const COVER_NOISE_AMP_MM: f64 = 1.5;
/// Limbs elevated above this height produce no contact pressure.
const CONTACT_MM: f64 = 6.0;
const PRESSURE_UNIT: f64 = 0.55;

const TAG_POSE: u64 = 0x706f_7365;
const TAG_RENDER: u64 = 0x726e_6472;
const TAG_ELEV: u64 = 0x656c_6576;
const TAG_NOISE: u64 = 0x6e6f_6973;

/// Body proportions and physical scale of the rendered subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyProfile {
    /// Physical height/thickness multiplier (1.0 newborn, 2.4 adult).
    pub height_scale: f64,
    /// Contact-pressure multiplier.
    pub weight_scale: f64,
    /// Relative leg length (adults are leggier than newborns).
    pub leg_factor: f64,
    /// Relative head size.
    pub head_factor: f64,
    /// Simulated corpora render without sensor noise.
    pub clean: bool,
}

impl BodyProfile {
    pub fn newborn() -> Self {
        BodyProfile { height_scale: 1.0, weight_scale: 1.0, leg_factor: 1.0, head_factor: 1.0, clean: false }
    }

    pub fn adult() -> Self {
        BodyProfile { height_scale: 2.4, weight_scale: 2.4, leg_factor: 1.25, head_factor: 0.75, clean: false }
    }

    pub fn adult_clean() -> Self {
        BodyProfile { clean: true, ..BodyProfile::adult() }
    }

    pub fn for_source(source: Source) -> Self {
        match source {
            Source::SmalLike => BodyProfile::newborn(),
            Source::SlpLike => BodyProfile::adult(),
            Source::SynthSim => BodyProfile::adult_clean(),
        }
    }
}

#[inline]
fn ray(angle: f64) -> (f64, f64) {
    // Angle 0 points down the image (+y); positive angles rotate toward +x.
    (angle.sin(), angle.cos())
}

#[inline]
fn add(p: (f64, f64), d: (f64, f64), len: f64) -> (f64, f64) {
    (p.0 + d.0 * len, p.1 + d.1 * len)
}

/// Snap to a 1/1024 grid so mirror arithmetic on coordinates stays exact.
#[inline]
fn quantize(v: f64) -> f64 {
    (v * 1024.0).round() / 1024.0
}

/// Sample a kinematically plausible 14-joint skeleton at newborn scale.
pub fn generate_pose(category: Category, rng_seed: u64) -> Pose {
    generate_pose_profile(category, rng_seed, BodyProfile::newborn())
        .expect("newborn pose generation stays in bounds")
}

/// Pose sampling with an explicit body profile.
pub fn generate_pose_profile(
    category: Category,
    rng_seed: u64,
    profile: BodyProfile,
) -> Result<Pose, DataError> {
    let mut rng = Rng::new(derive_seed(&[rng_seed, TAG_POSE]));
    let u = MM_TO_UNITS;
    let torso = TORSO_MM * u;
    let head = HEAD_MM * u * profile.head_factor;
    let shoulder_half = SHOULDER_HALF_MM * u;
    let hip_half = HIP_HALF_MM * u;
    let thigh = THIGH_MM * u * profile.leg_factor;
    let shank = SHANK_MM * u * profile.leg_factor;
    let upper_arm = UPPER_ARM_MM * u;
    let forearm = FOREARM_MM * u;

    for _ in 0..RESAMPLE_CAP {
        let tilt = rng.range(-MAX_TORSO_TILT, MAX_TORSO_TILT);
        let roll = match category {
            Category::Supine => rng.range(-MAX_SUPINE_ROLL, MAX_SUPINE_ROLL),
            Category::Left => rng.range(50.0 * DEG, 75.0 * DEG),
            Category::Right => -rng.range(50.0 * DEG, 75.0 * DEG),
        };
        let thorax = (rng.range(92.0, 132.0), rng.range(58.0, 92.0));
        let head_jitter = rng.range(-8.0 * DEG, 8.0 * DEG);

        let down = ray(tilt);
        let compress = roll.cos();
        let shift = roll.sin() * LATERAL_SHIFT_MM * u;
        let hip_center = add(thorax, down, torso);
        let head_top = add(thorax, ray(tilt + head_jitter), -head);

        // Right side sits along +90 degrees from the torso axis.
        let perp = ray(tilt + 90.0 * DEG);
        let place = |origin: (f64, f64), half: f64, side: f64| {
            add(origin, perp, side * half * compress + shift)
        };
        let shoulder_r = place(thorax, shoulder_half, 1.0);
        let shoulder_l = place(thorax, shoulder_half, -1.0);
        let hip_r = place(hip_center, hip_half, 1.0);
        let hip_l = place(hip_center, hip_half, -1.0);

        // Arm/leg chains. The side lying against the mattress folds tighter.
        let mut limb = |side: f64| {
            let under = match category {
                Category::Left => side < 0.0,
                Category::Right => side > 0.0,
                Category::Supine => false,
            };
            let (ua_lo, ua_hi) = if under { (10.0, 60.0) } else { (25.0, 155.0) };
            let theta_ua = rng.range(ua_lo * DEG, ua_hi * DEG);
            let theta_el = rng.range(-110.0 * DEG, 15.0 * DEG);
            let theta_th = rng.range(-25.0 * DEG, 55.0 * DEG);
            let theta_kn = rng.range(-115.0 * DEG, 8.0 * DEG);
            (theta_ua, theta_el, theta_th, theta_kn)
        };
        let (r_ua, r_el, r_th, r_kn) = limb(1.0);
        let (l_ua, l_el, l_th, l_kn) = limb(-1.0);

        let elbow_r = add(shoulder_r, ray(tilt + r_ua), upper_arm);
        let wrist_r = add(elbow_r, ray(tilt + r_ua + r_el), forearm);
        let elbow_l = add(shoulder_l, ray(tilt - l_ua), upper_arm);
        let wrist_l = add(elbow_l, ray(tilt - l_ua - l_el), forearm);

        let knee_r = add(hip_r, ray(tilt + r_th), thigh);
        let ankle_r = add(knee_r, ray(tilt + r_th + r_kn), shank);
        let knee_l = add(hip_l, ray(tilt - l_th), thigh);
        let ankle_l = add(knee_l, ray(tilt - l_th - l_kn), shank);

        let joints = [
            ankle_r, knee_r, hip_r, hip_l, knee_l, ankle_l, wrist_r, elbow_r, shoulder_r,
            shoulder_l, elbow_l, wrist_l, thorax, head_top,
        ];
        let hi = RASTER_SIZE as f64 - BOUNDS_MARGIN;
        if joints
            .iter()
            .all(|&(x, y)| x >= BOUNDS_MARGIN && x < hi && y >= BOUNDS_MARGIN && y < hi)
        {
            let mut snapped = [(0.0, 0.0); JOINT_COUNT];
            for (dst, &(x, y)) in snapped.iter_mut().zip(&joints) {
                *dst = (quantize(x), quantize(y));
            }
            return Ok(Pose { joints: snapped, plane: Plane::Psm });
        }
    }
    Err(DataError::ResampleCap(RESAMPLE_CAP))
}

/// Body segments used by the renderer, in a fixed order.
#[derive(Debug, Clone, Copy)]
struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    radius_mm: f64,
    weight: f64,
}

pub const N_SEGMENTS: usize = 12;
const SEG_FOREARM_R: usize = 10;
const SEG_FOREARM_L: usize = 11;
const SEG_UPPER_ARM_R: usize = 8;
const SEG_UPPER_ARM_L: usize = 9;
const SEG_SHANK_R: usize = 6;
const SEG_SHANK_L: usize = 7;

fn body_segments(pose: &Pose) -> [Segment; N_SEGMENTS] {
    use super::Joint::*;
    let j = |jt: super::Joint| pose.joints[jt as usize];
    let seg = |a, b, radius_mm, weight| Segment { a, b, radius_mm, weight };
    let thorax = j(Thorax);
    let hip_center = (
        (j(HipR).0 + j(HipL).0) / 2.0,
        (j(HipR).1 + j(HipL).1) / 2.0,
    );
    let head_top = j(HeadTop);
    let head_end = (
        head_top.0 + 0.55 * (thorax.0 - head_top.0),
        head_top.1 + 0.55 * (thorax.1 - head_top.1),
    );
    [
        seg(thorax, hip_center, 40.0, 2.2),
        seg(j(ShoulderL), j(ShoulderR), 34.0, 1.6),
        seg(j(HipL), j(HipR), 32.0, 1.8),
        seg(head_top, head_end, 35.0, 1.4),
        seg(j(HipR), j(KneeR), 22.0, 0.9),
        seg(j(HipL), j(KneeL), 22.0, 0.9),
        seg(j(KneeR), j(AnkleR), 18.0, 0.6),
        seg(j(KneeL), j(AnkleL), 18.0, 0.6),
        seg(j(ShoulderR), j(ElbowR), 16.0, 0.5),
        seg(j(ShoulderL), j(ElbowL), 16.0, 0.5),
        seg(j(ElbowR), j(WristR), 14.0, 0.4),
        seg(j(ElbowL), j(WristL), 14.0, 0.4),
    ]
}

/// Per-segment elevation above the mattress, millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbElevations {
    pub mm: [f64; N_SEGMENTS],
}

impl LimbElevations {
    pub fn flat() -> Self {
        LimbElevations { mm: [0.0; N_SEGMENTS] }
    }

    pub fn raised_forearm_r(elev_mm: f64) -> Self {
        let mut e = Self::flat();
        e.mm[SEG_FOREARM_R] = elev_mm;
        e.mm[SEG_UPPER_ARM_R] = 0.4 * elev_mm;
        e
    }
}

/// Sample which limbs are lifted off the mattress; independent of cover so
/// every cover variant of a pose shares one contact state.
fn sample_elevations(seed: u64, profile: BodyProfile) -> LimbElevations {
    let mut rng = Rng::new(derive_seed(&[seed, TAG_ELEV]));
    let mut elev = LimbElevations::flat();
    let mut arm = |fore: usize, upper: usize, rng: &mut Rng| {
        if rng.chance(0.18) {
            let e = rng.range(30.0, 80.0) * profile.height_scale;
            elev.mm[fore] = e;
            elev.mm[upper] = 0.4 * e;
        }
    };
    arm(SEG_FOREARM_R, SEG_UPPER_ARM_R, &mut rng);
    arm(SEG_FOREARM_L, SEG_UPPER_ARM_L, &mut rng);
    for shank in [SEG_SHANK_R, SEG_SHANK_L] {
        if rng.chance(0.08) {
            elev.mm[shank] = rng.range(20.0, 50.0) * profile.height_scale;
        }
    }
    elev
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Inclusive pixel window that bounds every nonzero body pixel.
#[derive(Clone, Copy)]
struct Window {
    x_lo: usize,
    x_hi: usize,
    y_lo: usize,
    y_hi: usize,
}

impl Window {
    fn expand(self, margin: usize) -> Window {
        let n = RASTER_SIZE - 1;
        Window {
            x_lo: self.x_lo.saturating_sub(margin),
            x_hi: (self.x_hi + margin).min(n),
            y_lo: self.y_lo.saturating_sub(margin),
            y_hi: (self.y_hi + margin).min(n),
        }
    }
}

/// Separable Gaussian blur restricted to a window; everything outside the
/// expanded window is zero in `src` and stays zero, so the result matches a
/// full-frame convolution exactly.
fn gaussian_blur(src: &[f32], sigma: f64, win: Window) -> Vec<f32> {
    let n = RASTER_SIZE;
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for i in -(radius as isize)..=(radius as isize) {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.into_iter().map(|w| (w / sum) as f32).collect();
    let reach = win.expand(radius);

    let mut tmp = vec![0.0f32; n * n];
    for y in win.y_lo..=win.y_hi {
        let row = &src[y * n..(y + 1) * n];
        for x in reach.x_lo..=reach.x_hi {
            let mut acc = 0.0f32;
            for (k, &w) in kernel.iter().enumerate() {
                let xi = x as isize + k as isize - radius as isize;
                if xi >= 0 && (xi as usize) < n {
                    acc += w * row[xi as usize];
                }
            }
            tmp[y * n + x] = acc;
        }
    }
    let mut out = vec![0.0f32; n * n];
    for y in reach.y_lo..=reach.y_hi {
        for x in reach.x_lo..=reach.x_hi {
            let mut acc = 0.0f32;
            for (k, &w) in kernel.iter().enumerate() {
                let yi = y as isize + k as isize - radius as isize;
                if yi >= 0 && (yi as usize) < n {
                    acc += w * tmp[yi as usize * n + x];
                }
            }
            out[y * n + x] = acc;
        }
    }
    out
}

/// Square max-filter dilation via two windowed passes.
fn dilate(src: &[f32], radius: usize, win: Window) -> Vec<f32> {
    let n = RASTER_SIZE;
    let reach = win.expand(radius);
    let mut tmp = vec![0.0f32; n * n];
    for y in win.y_lo..=win.y_hi {
        for x in reach.x_lo..=reach.x_hi {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(n - 1);
            let mut m = 0.0f32;
            for xi in lo..=hi {
                m = m.max(src[y * n + xi]);
            }
            tmp[y * n + x] = m;
        }
    }
    let mut out = vec![0.0f32; n * n];
    for y in reach.y_lo..=reach.y_hi {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(n - 1);
        for x in reach.x_lo..=reach.x_hi {
            let mut m = 0.0f32;
            for yi in lo..=hi {
                m = m.max(tmp[yi * n + x]);
            }
            out[y * n + x] = m;
        }
    }
    out
}

/// Render aligned depth (mm above mattress) and pressure (N/cm^2) rasters
/// with explicitly supplied limb elevations.
pub fn render_rasters_with(
    pose: &Pose,
    cover: Cover,
    seed: u64,
    profile: BodyProfile,
    elev: &LimbElevations,
) -> (Vec<f32>, Vec<f32>) {
    let n = RASTER_SIZE;
    let segments = body_segments(pose);
    let mut height = vec![0.0f32; n * n];
    let mut pressure = vec![0.0f32; n * n];
    let contact_limit = CONTACT_MM * profile.height_scale;
    let mut body = Window { x_lo: n - 1, x_hi: 0, y_lo: n - 1, y_hi: 0 };

    for (si, seg) in segments.iter().enumerate() {
        let r_units = seg.radius_mm * MM_TO_UNITS;
        let e_mm = elev.mm[si];
        let x_lo = (seg.a.0.min(seg.b.0) - r_units).floor().max(0.0) as usize;
        let x_hi = (seg.a.0.max(seg.b.0) + r_units).ceil().min((n - 1) as f64) as usize;
        let y_lo = (seg.a.1.min(seg.b.1) - r_units).floor().max(0.0) as usize;
        let y_hi = (seg.a.1.max(seg.b.1) + r_units).ceil().min((n - 1) as f64) as usize;
        body.x_lo = body.x_lo.min(x_lo);
        body.x_hi = body.x_hi.max(x_hi);
        body.y_lo = body.y_lo.min(y_lo);
        body.y_hi = body.y_hi.max(y_hi);
        let touching = e_mm < contact_limit;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let d = dist_to_segment((x as f64, y as f64), seg.a, seg.b);
                if d >= r_units {
                    continue;
                }
                let d_mm = d * MM_PER_UNIT;
                let bulge = (seg.radius_mm * seg.radius_mm - d_mm * d_mm).max(0.0).sqrt();
                let z = profile.height_scale * (seg.radius_mm + bulge) + e_mm;
                let i = y * n + x;
                if z as f32 > height[i] {
                    height[i] = z as f32;
                }
                if touching {
                    pressure[i] += (seg.weight
                        * (bulge / seg.radius_mm)
                        * PRESSURE_UNIT
                        * profile.weight_scale) as f32;
                }
            }
        }
    }

    for p in pressure.iter_mut() {
        *p = p.clamp(0.0, super::PRESSURE_MAX);
    }

    let mut depth = match cover {
        Cover::Uncovered => height.clone(),
        Cover::Thin => gaussian_blur(&height, THIN_SIGMA_UNITS, body),
        Cover::Thick => {
            let mut draped = dilate(&height, DILATE_RADIUS_UNITS, body);
            for v in draped.iter_mut() {
                if *v > 0.0 {
                    *v += BLANKET_MM;
                }
            }
            gaussian_blur(&draped, THICK_SIGMA_UNITS, body.expand(DILATE_RADIUS_UNITS))
        }
    };

    if !profile.clean {
        let mut noise = Rng::new(derive_seed(&[seed, TAG_NOISE]));
        let amp = COVER_NOISE_AMP_MM * profile.height_scale;
        for v in depth.iter_mut() {
            *v = (*v + noise.range(-amp, amp) as f32).clamp(0.0, 400.0);
        }
    }

    (depth, pressure)
}

/// Render both rasters for a pose, sampling limb elevations from the seed.
pub fn render_rasters(pose: &Pose, cover: Cover, seed: u64, profile: BodyProfile) -> (Vec<f32>, Vec<f32>) {
    let elev = sample_elevations(seed, profile);
    render_rasters_with(pose, cover, seed, profile, &elev)
}

/// Render one sample eagerly.
pub fn render_sample(
    pose: &Pose,
    cover: Cover,
    rng_seed: u64,
    profile: BodyProfile,
    category: Category,
    pose_id: u32,
) -> Result<Sample, DataError> {
    let hi = RASTER_SIZE as f64;
    for (ji, &(x, y)) in pose.joints.iter().enumerate() {
        if !(0.0..hi).contains(&x) || !(0.0..hi).contains(&y) {
            return Err(DataError::OutOfBounds { joint: ji, x, y });
        }
    }
    let (depth, pressure) = render_rasters(pose, cover, rng_seed, profile);
    Ok(Sample {
        pose: pose.clone(),
        cover,
        category,
        pose_id,
        depth: Raster::from_vec(depth)?,
        pressure: Raster::from_vec(pressure)?,
    })
}

/// Generate a full dataset: `n_poses` skeletons, three cover conditions
/// each, categories balanced in thirds, rasters rendered lazily.
pub fn generate_dataset(n_poses: usize, seed: u64, source: Source) -> Result<Dataset, DataError> {
    if n_poses == 0 || n_poses % 3 != 0 {
        return Err(DataError::NotDivisible(n_poses, 3));
    }
    let profile = BodyProfile::for_source(source);
    let per_category = n_poses / 3;
    let mut samples = Vec::with_capacity(n_poses * 3);
    for pose_id in 0..n_poses {
        let category = Category::ALL[pose_id / per_category];
        let pose = generate_pose_profile(category, derive_seed(&[seed, TAG_POSE, pose_id as u64]), profile)?;
        let render_seed = derive_seed(&[seed, TAG_RENDER, pose_id as u64]);
        for cover in Cover::ALL {
            samples.push(Sample {
                pose: pose.clone(),
                cover,
                category,
                pose_id: pose_id as u32,
                depth: Raster::synth(&pose, cover, render_seed, profile, RasterKind::Depth),
                pressure: Raster::synth(&pose, cover, render_seed, profile, RasterKind::Pressure),
            });
        }
    }
    Ok(Dataset {
        samples,
        source,
        manifest: DatasetManifest::generated(source, seed, n_poses),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_repeats_pose() {
        let a = generate_pose(Category::Left, 99);
        let b = generate_pose(Category::Left, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn supine_shoulders_stay_level() {
        // The shared lateral shift cancels between shoulders, so shoulder dy
        // is the full width projected through the maximum torso tilt, plus
        // grid snapping.
        let bound = 2.0 * SHOULDER_HALF_UNITS * MAX_TORSO_TILT.sin() + 0.01;
        for seed in 0..200 {
            let pose = generate_pose(Category::Supine, seed);
            let dy = (pose.joint(super::super::Joint::ShoulderL).1
                - pose.joint(super::super::Joint::ShoulderR).1)
                .abs();
            assert!(dy <= bound, "seed {seed}: dy {dy} > bound {bound}");
            assert!(dy < 0.5 * TORSO_UNITS);
        }
    }

    #[test]
    fn thousand_poses_in_bounds() {
        for seed in 0..1000 {
            let cat = Category::ALL[(seed % 3) as usize];
            let pose = generate_pose(cat, seed);
            for &(x, y) in &pose.joints {
                assert!((0.0..224.0).contains(&x) && (0.0..224.0).contains(&y));
            }
        }
    }

    #[test]
    fn adult_profile_poses_fit_too() {
        for seed in 0..200 {
            let cat = Category::ALL[(seed % 3) as usize];
            let pose =
                generate_pose_profile(cat, seed, BodyProfile::adult()).expect("adult pose");
            for &(x, y) in &pose.joints {
                assert!((0.0..224.0).contains(&x) && (0.0..224.0).contains(&y));
            }
        }
    }

    #[test]
    fn cover_changes_depth_only() {
        let pose = generate_pose(Category::Supine, 5);
        let profile = BodyProfile::newborn();
        let (d_unc, p_unc) = render_rasters(&pose, Cover::Uncovered, 42, profile);
        let (d_thick, p_thick) = render_rasters(&pose, Cover::Thick, 42, profile);
        assert_eq!(p_unc, p_thick, "pressure must not depend on cover");
        assert_ne!(d_unc, d_thick, "depth must change under a thick cover");
    }

    #[test]
    fn raised_forearm_produces_no_pressure() {
        let pose = generate_pose(Category::Supine, 17);
        let profile = BodyProfile::newborn();
        let elev = LimbElevations::raised_forearm_r(60.0);
        let (_, pressure) = render_rasters_with(&pose, Cover::Uncovered, 1, profile, &elev);
        let (_, flat_pressure) =
            render_rasters_with(&pose, Cover::Uncovered, 1, profile, &LimbElevations::flat());

        // Probe along the raised forearm, away from other segments.
        let elbow = pose.joint(super::super::Joint::ElbowR);
        let wrist = pose.joint(super::super::Joint::WristR);
        let segs = body_segments(&pose);
        let mut probed = 0;
        for t in [0.4, 0.6, 0.8, 0.95] {
            let p = (elbow.0 + t * (wrist.0 - elbow.0), elbow.1 + t * (wrist.1 - elbow.1));
            let clear = segs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != SEG_FOREARM_R && *i != SEG_UPPER_ARM_R)
                .all(|(_, s)| dist_to_segment(p, s.a, s.b) > s.radius_mm * MM_TO_UNITS + 1.0);
            if !clear {
                continue;
            }
            probed += 1;
            let i = (p.1.round() as usize) * RASTER_SIZE + p.0.round() as usize;
            assert_eq!(pressure[i], 0.0, "pressure under raised forearm at t={t}");
            assert!(flat_pressure[i] > 0.0, "flat forearm should press at t={t}");
        }
        assert!(probed > 0, "no clear probe point along the forearm");
    }

    #[test]
    fn thick_cover_dominates_smoothed_uncovered() {
        let profile = BodyProfile::newborn();
        let noise_floor = (2.0 * COVER_NOISE_AMP_MM * profile.height_scale) as f32 + 0.1;
        for seed in 0..100 {
            let cat = Category::ALL[(seed % 3) as usize];
            let pose = generate_pose(cat, 3000 + seed);
            let (d_unc, _) = render_rasters(&pose, Cover::Uncovered, seed, profile);
            let (d_thick, _) = render_rasters(&pose, Cover::Thick, seed, profile);
            let full = Window { x_lo: 0, x_hi: RASTER_SIZE - 1, y_lo: 0, y_hi: RASTER_SIZE - 1 };
            let smoothed = gaussian_blur(&d_unc, THICK_SIGMA_UNITS, full);
            // Only assert over the body envelope.
            let elev = sample_elevations(seed, profile);
            let (raw, _) = render_rasters_with(&pose, Cover::Uncovered, seed, BodyProfile { clean: true, ..profile }, &elev);
            for i in 0..raw.len() {
                if raw[i] > 0.0 {
                    assert!(
                        d_thick[i] >= smoothed[i] - noise_floor,
                        "seed {seed} pixel {i}: thick {} < smoothed {} - floor",
                        d_thick[i],
                        smoothed[i]
                    );
                }
            }
        }
    }

    #[test]
    fn generate_dataset_counts_and_balance() {
        let ds = generate_dataset(300, 7, Source::SmalLike).unwrap();
        assert_eq!(ds.samples.len(), 900);
        for cat in Category::ALL {
            let ids: std::collections::BTreeSet<u32> = ds
                .samples
                .iter()
                .filter(|s| s.category == cat)
                .map(|s| s.pose_id)
                .collect();
            assert_eq!(ids.len(), 100);
        }
    }

    #[test]
    fn tiny_dataset_has_nine_samples() {
        let ds = generate_dataset(3, 1, Source::SmalLike).unwrap();
        assert_eq!(ds.samples.len(), 9);
    }

    #[test]
    fn non_divisible_pose_count_rejected() {
        assert!(matches!(
            generate_dataset(301, 1, Source::SmalLike),
            Err(DataError::NotDivisible(301, 3))
        ));
    }

    #[test]
    fn same_seed_bit_identical_dataset() {
        let a = generate_dataset(6, 123, Source::SlpLike).unwrap();
        let b = generate_dataset(6, 123, Source::SlpLike).unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.pose, sb.pose);
            assert_eq!(sa.depth.materialize(), sb.depth.materialize());
            assert_eq!(sa.pressure.materialize(), sb.pressure.materialize());
        }
    }

    #[test]
    fn cover_triples_share_pose() {
        let ds = generate_dataset(6, 9, Source::SmalLike).unwrap();
        for chunk in ds.samples.chunks(3) {
            assert_eq!(chunk[0].pose, chunk[1].pose);
            assert_eq!(chunk[1].pose, chunk[2].pose);
            assert_eq!(chunk[0].pose_id, chunk[2].pose_id);
        }
    }

    #[test]
    fn lazy_and_eager_rendering_agree() {
        let ds = generate_dataset(3, 55, Source::SmalLike).unwrap();
        let s = &ds.samples[4];
        let render_seed = derive_seed(&[55, TAG_RENDER, s.pose_id as u64]);
        let eager = render_sample(
            &s.pose,
            s.cover,
            render_seed,
            BodyProfile::newborn(),
            s.category,
            s.pose_id,
        )
        .unwrap();
        assert_eq!(s.depth.materialize(), eager.depth.materialize());
        assert_eq!(s.pressure.materialize(), eager.pressure.materialize());
    }

    #[test]
    fn out_of_bounds_pose_rejected_by_renderer() {
        let mut pose = generate_pose(Category::Supine, 1);
        pose.joints[0].0 = 500.0;
        let err = render_sample(&pose, Cover::Thin, 1, BodyProfile::newborn(), Category::Supine, 0);
        assert!(matches!(err, Err(DataError::OutOfBounds { joint: 0, .. })));
    }
}
