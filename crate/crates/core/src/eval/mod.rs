//! Metrics and reporting: PCK, NME in millimetres, per-joint/per-cover
//! breakdowns, paired significance tests, and report emission.

mod metrics;
mod report;
mod stats;

pub use metrics::{breakdown, nme_mm, pck, CoverTable, JointCoverTables, LabeledPair, MetricResult};
pub use report::{emit_report, load_report, render_tables};
pub use stats::{paired_t_test, student_t_two_sided_p, TTest};

use serde::{Deserialize, Serialize};

use crate::data::JOINT_COUNT;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction and ground-truth lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty evaluation set")]
    Empty,
    #[error("poses must share one coordinate plane")]
    PlaneMismatch,
    #[error("zero variance of paired differences; the t statistic is undefined")]
    ZeroVariance,
    #[error("paired test needs at least 2 observations, got {0}")]
    TooFewPairs(usize),
    #[error("{0}")]
    Invalid(String),
    #[error("io {path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("report {path}: {msg}")]
    Report { path: String, msg: String },
}

/// Unit-chain configuration for the metrics.
///
/// The conversion from 224-unit raster coordinates to millimetres lives here
/// and nowhere else: `mm_per_unit = mm_per_sensel / units_per_sensel`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub pck_threshold: f64,
    /// Normalization length in sensels (the mat side).
    pub norm_length: f64,
    pub mm_per_sensel: f64,
    pub units_per_sensel_in_image: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            pck_threshold: 0.05,
            norm_length: crate::data::PSM_SENSELS as f64,
            mm_per_sensel: crate::data::SENSEL_PITCH_MM,
            units_per_sensel_in_image: crate::data::UNITS_PER_SENSEL,
        }
    }
}

impl MetricConfig {
    pub fn mm_per_unit(&self) -> f64 {
        self.mm_per_sensel / self.units_per_sensel_in_image
    }

    /// Normalization length expressed in raster units.
    pub fn norm_units(&self) -> f64 {
        self.norm_length * self.units_per_sensel_in_image
    }

    /// PCK radius in millimetres (25.4 at the defaults).
    pub fn threshold_mm(&self) -> f64 {
        self.pck_threshold * self.norm_length * self.mm_per_sensel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub joint: String,
    pub pck_thin: f64,
    pub pck_thick: f64,
    pub pck_avg: f64,
    pub nme_thin: f64,
    pub nme_thick: f64,
    pub nme_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSummary {
    pub pck_thin: f64,
    pub pck_thick: f64,
    pub nme_thin: f64,
    pub nme_thick: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldSummary {
    pub pck: Vec<f64>,
    pub nme_mm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub pair: String,
    pub t: f64,
    pub p_two_sided: f64,
    pub alpha_corrected: f64,
    pub significant: bool,
}

/// Full evaluation result mirroring the reporting tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: MetricConfig,
    pub per_joint: Vec<JointRow>,
    pub per_cover: CoverSummary,
    pub per_fold: FoldSummary,
    pub mean_pck: f64,
    pub mean_nme_mm: f64,
    pub significance: Vec<SignificanceEntry>,
}

impl EvalReport {
    /// Assemble a report from breakdown tables and optional fold metrics.
    pub fn from_tables(
        config: MetricConfig,
        tables: &JointCoverTables,
        per_fold: FoldSummary,
        significance: Vec<SignificanceEntry>,
    ) -> EvalReport {
        let per_joint = (0..JOINT_COUNT)
            .map(|j| JointRow {
                joint: crate::data::JOINT_LABELS[j].to_string(),
                pck_thin: tables.pck.thin[j],
                pck_thick: tables.pck.thick[j],
                pck_avg: tables.pck.average[j],
                nme_thin: tables.nme_mm.thin[j],
                nme_thick: tables.nme_mm.thick[j],
                nme_avg: tables.nme_mm.average[j],
            })
            .collect();
        let per_cover = CoverSummary {
            pck_thin: tables.pck.thin_mean,
            pck_thick: tables.pck.thick_mean,
            nme_thin: tables.nme_mm.thin_mean,
            nme_thick: tables.nme_mm.thick_mean,
        };
        let (mean_pck, mean_nme_mm) = if per_fold.pck.is_empty() {
            (tables.pck.grand_mean, tables.nme_mm.grand_mean)
        } else {
            (
                per_fold.pck.iter().sum::<f64>() / per_fold.pck.len() as f64,
                per_fold.nme_mm.iter().sum::<f64>() / per_fold.nme_mm.len() as f64,
            )
        };
        EvalReport {
            config,
            per_joint,
            per_cover,
            per_fold,
            mean_pck,
            mean_nme_mm,
            significance,
        }
    }
}
