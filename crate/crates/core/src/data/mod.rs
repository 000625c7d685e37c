//! Dataset model: poses, aligned depth/pressure samples, synthetic
//! generation, splits, augmentation, and the on-disk manifest format.

mod augment;
mod generate;
mod io;
mod split;

pub use augment::{augment, hflip_sample, preprocess, Augmented, ModalityMask};
pub use generate::{
    generate_dataset, generate_pose, render_rasters, render_sample, BodyProfile, LimbElevations,
    COVER_NOISE_AMP_MM, THICK_SIGMA_UNITS,
};
pub use io::{load_dataset, save_dataset, DatasetManifest};
pub use split::{assemble_holdout, assemble_split, make_folds, SplitPlan};

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::geometry::Plane;

/// Side of the square raster every sample is resampled to.
pub const RASTER_SIZE: usize = 224;
/// Sensels per side of the pressure mat.
pub const PSM_SENSELS: usize = 100;
/// Physical pitch of one sensel in millimetres.
pub const SENSEL_PITCH_MM: f64 = 5.08;
/// Sensor ceiling of the pressure mat in N/cm^2.
pub const PRESSURE_MAX: f32 = 3.41;
/// Raster units per sensel: the 224 raster covers the 100-sensel mat.
pub const UNITS_PER_SENSEL: f64 = RASTER_SIZE as f64 / PSM_SENSELS as f64;
/// Depth normalization span above the mattress plane, in millimetres.
pub const DEPTH_RANGE_MM: f32 = 300.0;

pub const JOINT_COUNT: usize = 14;

/// The 14 tracked joints, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Joint {
    AnkleR = 0,
    KneeR = 1,
    HipR = 2,
    HipL = 3,
    KneeL = 4,
    AnkleL = 5,
    WristR = 6,
    ElbowR = 7,
    ShoulderR = 8,
    ShoulderL = 9,
    ElbowL = 10,
    WristL = 11,
    Thorax = 12,
    HeadTop = 13,
}

impl Joint {
    pub const ALL: [Joint; JOINT_COUNT] = [
        Joint::AnkleR,
        Joint::KneeR,
        Joint::HipR,
        Joint::HipL,
        Joint::KneeL,
        Joint::AnkleL,
        Joint::WristR,
        Joint::ElbowR,
        Joint::ShoulderR,
        Joint::ShoulderL,
        Joint::ElbowL,
        Joint::WristL,
        Joint::Thorax,
        Joint::HeadTop,
    ];

    /// Table label, e.g. `R-Ankle`.
    pub fn label(self) -> &'static str {
        JOINT_LABELS[self as usize]
    }
}

pub const JOINT_LABELS: [&str; JOINT_COUNT] = [
    "R-Ankle", "R-Knee", "R-Hip", "L-Hip", "L-Knee", "L-Ankle", "R-Wrist", "R-Elbow",
    "R-Shoulder", "L-Shoulder", "L-Elbow", "L-Wrist", "Thorax", "Head-Top",
];

/// Index map for a horizontal flip: left/right joint pairs swap, the axial
/// joints stay put.
pub const HFLIP_SWAP: [usize; JOINT_COUNT] = [5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6, 12, 13];

/// Ordered 14-joint keypoint set in a named coordinate plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: [(f64, f64); JOINT_COUNT],
    pub plane: Plane,
}

impl Pose {
    pub fn joint(&self, j: Joint) -> (f64, f64) {
        self.joints[j as usize]
    }

    /// Same coordinates, retagged to another plane.
    pub fn into_plane(mut self, plane: Plane) -> Pose {
        self.plane = plane;
        self
    }

    /// Mirror about the vertical raster axis and swap left/right labels.
    pub fn hflip(&self) -> Pose {
        let mirror = (RASTER_SIZE - 1) as f64;
        let mut joints = [(0.0, 0.0); JOINT_COUNT];
        for (dst, &src) in HFLIP_SWAP.iter().enumerate() {
            let (x, y) = self.joints[src];
            joints[dst] = (mirror - x, y);
        }
        Pose { joints, plane: self.plane }
    }

    pub fn all_finite(&self) -> bool {
        self.joints.iter().all(|(x, y)| x.is_finite() && y.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Cover {
    Uncovered,
    Thin,
    Thick,
}

impl Cover {
    pub const ALL: [Cover; 3] = [Cover::Uncovered, Cover::Thin, Cover::Thick];

    pub fn tag(self) -> &'static str {
        match self {
            Cover::Uncovered => "uncovered",
            Cover::Thin => "thin",
            Cover::Thick => "thick",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Supine,
    Left,
    Right,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Supine, Category::Left, Category::Right];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "SMAL_LIKE")]
    SmalLike,
    #[serde(rename = "SLP_LIKE")]
    SlpLike,
    #[serde(rename = "SYNTH_SIM")]
    SynthSim,
}

/// One 224x224 float raster. Synthetic rasters render on demand from their
/// recipe, so metadata-scale operations (splits, counts) never pay for
/// pixels they do not touch.
#[derive(Debug, Clone)]
pub struct Raster {
    repr: RasterRepr,
}

#[derive(Debug, Clone)]
enum RasterRepr {
    Loaded(Arc<Vec<f32>>),
    Synth {
        pose: Box<Pose>,
        cover: Cover,
        seed: u64,
        profile: BodyProfile,
        kind: RasterKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RasterKind {
    Depth,
    Pressure,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("pose count {0} is not divisible by {1}")]
    NotDivisible(usize, usize),
    #[error("pose generation exhausted {0} resamples without an in-bounds skeleton")]
    ResampleCap(usize),
    #[error("pose out of raster bounds: joint {joint} at ({x:.1}, {y:.1})")]
    OutOfBounds { joint: usize, x: f64, y: f64 },
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("missing raster file {0}")]
    MissingFile(String),
    #[error("{file}: raster shape {found:?}, expected [224, 224]")]
    RasterShape { file: String, found: Vec<usize> },
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error("io {path}: {err}")]
    Io { path: String, err: std::io::Error },
}

impl Raster {
    pub fn from_vec(data: Vec<f32>) -> Result<Raster, DataError> {
        if data.len() != RASTER_SIZE * RASTER_SIZE {
            return Err(DataError::RasterShape {
                file: "<memory>".into(),
                found: vec![data.len()],
            });
        }
        Ok(Raster { repr: RasterRepr::Loaded(Arc::new(data)) })
    }

    pub(crate) fn synth(
        pose: &Pose,
        cover: Cover,
        seed: u64,
        profile: BodyProfile,
        kind: RasterKind,
    ) -> Raster {
        Raster {
            repr: RasterRepr::Synth { pose: Box::new(pose.clone()), cover, seed, profile, kind },
        }
    }

    /// Pixel payload, rendering synthetic rasters on first touch.
    pub fn materialize(&self) -> Arc<Vec<f32>> {
        match &self.repr {
            RasterRepr::Loaded(data) => Arc::clone(data),
            RasterRepr::Synth { pose, cover, seed, profile, kind } => {
                let (depth, pressure) = render_rasters(pose, *cover, *seed, *profile);
                Arc::new(match kind {
                    RasterKind::Depth => depth,
                    RasterKind::Pressure => pressure,
                })
            }
        }
    }
}

/// Aligned depth + pressure pair with its annotation and condition metadata.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pose: Pose,
    pub cover: Cover,
    pub category: Category,
    pub pose_id: u32,
    pub depth: Raster,
    pub pressure: Raster,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub source: Source,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Unique pose ids in first-appearance order.
    pub fn pose_ids(&self) -> Vec<u32> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.pose_id) {
                out.push(s.pose_id);
            }
        }
        out
    }

    pub fn category_of(&self, pose_id: u32) -> Option<Category> {
        self.samples.iter().find(|s| s.pose_id == pose_id).map(|s| s.category)
    }
}

/// Training-time augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub max_rotation_deg: f64,
    pub max_scale: f64,
    pub occlusion_prob: f64,
    pub intensity_scale: f64,
    pub hflip_prob: f64,
}

impl AugmentPolicy {
    /// Heavy augmentation used for the adult-corpus fine-tuning stage.
    pub fn slp_stage() -> Self {
        AugmentPolicy {
            max_rotation_deg: 30.0,
            max_scale: 0.25,
            occlusion_prob: 0.5,
            intensity_scale: 0.2,
            hflip_prob: 0.5,
        }
    }

    /// Slight rotation and flips only, for the small mannequin corpus.
    pub fn smal_stage() -> Self {
        AugmentPolicy {
            max_rotation_deg: 2.0,
            max_scale: 0.0,
            occlusion_prob: 0.0,
            intensity_scale: 0.0,
            hflip_prob: 0.5,
        }
    }

    pub fn none() -> Self {
        AugmentPolicy {
            max_rotation_deg: 0.0,
            max_scale: 0.0,
            occlusion_prob: 0.0,
            intensity_scale: 0.0,
            hflip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let probs_ok = (0.0..=1.0).contains(&self.occlusion_prob)
            && (0.0..=1.0).contains(&self.hflip_prob);
        if !probs_ok || self.max_rotation_deg < 0.0 || self.max_scale < 0.0 || self.intensity_scale < 0.0
        {
            return Err(DataError::BadSplit(format!("invalid augment policy {self:?}")));
        }
        Ok(())
    }
}
