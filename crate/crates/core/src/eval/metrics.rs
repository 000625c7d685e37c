//! PCK and NME with per-joint, per-cover aggregation.

use super::{EvalError, MetricConfig};
use crate::data::{Cover, Pose, JOINT_COUNT};

/// Per-joint values plus their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    pub per_joint: [f64; JOINT_COUNT],
    pub mean: f64,
}

fn validate(pred: &[Pose], gt: &[Pose]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let plane = pred[0].plane;
    if pred.iter().chain(gt).any(|p| p.plane != plane) {
        return Err(EvalError::PlaneMismatch);
    }
    Ok(())
}

fn joint_distance_units(pred: &Pose, gt: &Pose, j: usize) -> f64 {
    let (px, py) = pred.joints[j];
    let (gx, gy) = gt.joints[j];
    ((px - gx).powi(2) + (py - gy).powi(2)).sqrt()
}

/// Percentage of correct keypoints per joint.
///
/// A joint counts as correct when its distance, normalized by the mat side,
/// is within (inclusive) the threshold: at the defaults 0.05 of 100 sensels,
/// i.e. 25.4 mm, i.e. 11.2 raster units.
pub fn pck(pred: &[Pose], gt: &[Pose], cfg: &MetricConfig) -> Result<MetricResult, EvalError> {
    validate(pred, gt)?;
    let norm_units = cfg.norm_units();
    // Inclusive boundary with a 1e-12 relative guard so an offset of exactly
    // the threshold distance is not pushed out by the last bit of rounding.
    let limit = cfg.pck_threshold * (1.0 + 1e-12);
    let mut per_joint = [0.0f64; JOINT_COUNT];
    for (p, g) in pred.iter().zip(gt) {
        for (j, slot) in per_joint.iter_mut().enumerate() {
            let normalized = joint_distance_units(p, g, j) / norm_units;
            if normalized <= limit {
                *slot += 1.0;
            }
        }
    }
    let n = pred.len() as f64;
    for v in per_joint.iter_mut() {
        *v = *v * 100.0 / n;
    }
    let mean = per_joint.iter().sum::<f64>() / JOINT_COUNT as f64;
    Ok(MetricResult { per_joint, mean })
}

/// Mean per-joint error in millimetres: raster units -> sensels -> mm.
pub fn nme_mm(pred: &[Pose], gt: &[Pose], cfg: &MetricConfig) -> Result<MetricResult, EvalError> {
    validate(pred, gt)?;
    let mm_per_unit = cfg.mm_per_unit();
    let mut per_joint = [0.0f64; JOINT_COUNT];
    for (p, g) in pred.iter().zip(gt) {
        for (j, slot) in per_joint.iter_mut().enumerate() {
            *slot += joint_distance_units(p, g, j) * mm_per_unit;
        }
    }
    let n = pred.len() as f64;
    for v in per_joint.iter_mut() {
        *v /= n;
    }
    let mean = per_joint.iter().sum::<f64>() / JOINT_COUNT as f64;
    Ok(MetricResult { per_joint, mean })
}

/// One evaluated prediction with its cover condition.
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub pred: Pose,
    pub gt: Pose,
    pub cover: Cover,
}

/// Joint-by-cover table: thin and thick columns plus their equal-weight
/// average, and the column means.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverTable {
    pub thin: [f64; JOINT_COUNT],
    pub thick: [f64; JOINT_COUNT],
    pub average: [f64; JOINT_COUNT],
    pub thin_mean: f64,
    pub thick_mean: f64,
    pub grand_mean: f64,
}

fn cover_table(thin: &MetricResult, thick: &MetricResult) -> CoverTable {
    let mut average = [0.0; JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        average[j] = (thin.per_joint[j] + thick.per_joint[j]) / 2.0;
    }
    CoverTable {
        thin: thin.per_joint,
        thick: thick.per_joint,
        average,
        thin_mean: thin.mean,
        thick_mean: thick.mean,
        grand_mean: (thin.mean + thick.mean) / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointCoverTables {
    pub pck: CoverTable,
    pub nme_mm: CoverTable,
}

/// Split labeled pairs by cover and compute both metric tables.
pub fn breakdown(pairs: &[LabeledPair], cfg: &MetricConfig) -> Result<JointCoverTables, EvalError> {
    if pairs.iter().any(|p| p.cover == Cover::Uncovered) {
        return Err(EvalError::Invalid(
            "breakdown expects covered evaluation samples only".into(),
        ));
    }
    let select = |cover: Cover| -> (Vec<Pose>, Vec<Pose>) {
        pairs
            .iter()
            .filter(|p| p.cover == cover)
            .map(|p| (p.pred.clone(), p.gt.clone()))
            .unzip()
    };
    let (thin_pred, thin_gt) = select(Cover::Thin);
    let (thick_pred, thick_gt) = select(Cover::Thick);
    if thin_pred.is_empty() || thick_pred.is_empty() {
        return Err(EvalError::Invalid("both cover conditions are required".into()));
    }
    let pck_table = cover_table(&pck(&thin_pred, &thin_gt, cfg)?, &pck(&thick_pred, &thick_gt, cfg)?);
    let nme_table = cover_table(
        &nme_mm(&thin_pred, &thin_gt, cfg)?,
        &nme_mm(&thick_pred, &thick_gt, cfg)?,
    );
    Ok(JointCoverTables { pck: pck_table, nme_mm: nme_table })
}
