//! Training orchestration: MAE pretraining, hierarchical stage variants,
//! two-stage fine-tuning with PCK early stopping, cross-validation, and the
//! modality/training-data ablation grid.

mod crossval;
mod engine;
mod experiments;
mod finetune;
mod pretrain;

pub use crossval::{cross_validate, CrossValResult};
pub use engine::{evaluate_pose_model, predict_pose, train_pose_model, PoseEvalOutcome};
pub use experiments::{
    hierarchy_comparison, render_ablation_text, run_ablation, AblationCell, AblationConfig,
    AblationTable, HierarchyComparison, HierarchyConfig,
};
pub use finetune::{finetune, two_stage_finetune, FinetuneOutcome, TwoStageOutcome};
pub use pretrain::{pretrain_mae, run_hierarchy, PretrainConfig};

use serde::{Deserialize, Serialize};

use crate::data::AugmentPolicy;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("stage {0} requires a dataset that was not provided")]
    MissingDataset(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// Supervised fine-tuning settings. Early stopping is fixed to mean
/// validation PCK: the snapshot with the highest value is returned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub epochs: usize,
    pub warmup: usize,
    pub policy: AugmentPolicy,
    pub seed: u64,
    /// Worker threads for batch-parallel passes (results are identical for
    /// any value; 0 means use all cores).
    pub threads: usize,
}

impl TrainConfig {
    /// Paper-scale settings for the adult-corpus stage.
    pub fn slp_stage(seed: u64) -> Self {
        TrainConfig {
            batch_size: 256,
            base_lr: 1e-3,
            epochs: 50,
            warmup: 5,
            policy: AugmentPolicy::slp_stage(),
            seed,
            threads: 0,
        }
    }

    /// Paper-scale settings for the mannequin-corpus stage.
    pub fn smal_stage(seed: u64) -> Self {
        TrainConfig {
            batch_size: 16,
            base_lr: 1e-4,
            epochs: 50,
            warmup: 5,
            policy: AugmentPolicy::smal_stage(),
            seed,
            threads: 0,
        }
    }

    /// Shrink batch size and epochs for desk-scale runs while keeping the
    /// learning-rate and augmentation structure.
    pub fn desk(mut self, batch_size: usize, epochs: usize) -> Self {
        self.batch_size = batch_size;
        self.epochs = epochs;
        self.warmup = self.warmup.min(epochs.saturating_sub(1)).max(1);
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.base_lr = lr;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }
}

/// Which in-domain pretraining a hierarchy run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// No in-domain masked-autoencoder pretraining (random initialization).
    Baseline,
    /// Simulated-corpus pretraining only.
    S,
    /// Real-corpus pretraining only.
    R,
    /// Simulated then real, each for the stage epoch count.
    B,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_uppercase().as_str() {
            "BASELINE" | "BASE" => Some(Variant::Baseline),
            "S" => Some(Variant::S),
            "R" => Some(Variant::R),
            "B" => Some(Variant::B),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::S => "S",
            Variant::R => "R",
            Variant::B => "B",
        }
    }
}

/// Pretraining stage plan: the variant and epochs per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub variant: Variant,
    pub epochs_per_stage: usize,
}

/// One epoch of logged metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_pck: Option<f64>,
}

/// Per-stage training log for run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub stage: String,
    pub dataset: String,
    pub epochs: Vec<EpochLog>,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}
