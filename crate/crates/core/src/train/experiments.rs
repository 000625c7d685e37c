//! Multi-seed experiment harnesses: the hierarchical-pretraining comparison
//! and the modality/training-data ablation grid.

use serde::{Deserialize, Serialize};

use crate::data::{assemble_split, generate_dataset, make_folds, ModalityMask, Source, SplitPlan};
use crate::eval::{paired_t_test, TTest};
use crate::model::{
    init_encoder_from, init_mae_checkpoint, init_vitpose_checkpoint, Checkpoint, HeadConfig,
    MaeConfig, StageRecord, ViTConfig,
};
use crate::rng::derive_seed;

use super::engine::evaluate_pose_model;
use super::finetune::{finetune, two_stage_finetune};
use super::pretrain::{pretrain_mae, PretrainConfig};
use super::{TrainConfig, TrainError, Variant};

const TAG_SMAL: u64 = 0x736d_616c;
const TAG_SIM: u64 = 0x73_696d;
const TAG_REAL: u64 = 0x7265_616c;
const TAG_SLP: u64 = 0x73_6c70;
const TAG_POSE_INIT: u64 = 0x7069_6e69;
const TAG_FOLDS: u64 = 0x666f_6c64;

/// Desk-scale settings for the hierarchy comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub seeds: Vec<u64>,
    pub smal_poses: usize,
    pub sim_poses: usize,
    pub real_poses: usize,
    pub stage_epochs: usize,
    pub pretrain: PretrainConfig,
    pub finetune: TrainConfig,
    pub vit: ViTConfig,
    pub mae: MaeConfig,
    pub head: HeadConfig,
}

impl HierarchyConfig {
    pub fn desk(seeds: Vec<u64>, threads: usize) -> Self {
        HierarchyConfig {
            seeds,
            smal_poses: 30,
            sim_poses: 60,
            real_poses: 30,
            stage_epochs: 12,
            pretrain: PretrainConfig {
                batch_size: 32,
                base_lr: 1.5e-3,
                warmup: 3,
                holdout_frac: 0.1,
                threads,
            },
            finetune: TrainConfig {
                batch_size: 12,
                base_lr: 1e-3,
                epochs: 12,
                warmup: 2,
                policy: crate::data::AugmentPolicy::smal_stage(),
                seed: 0,
                threads,
            },
            vit: ViTConfig::tiny(),
            mae: MaeConfig::tiny(),
            head: HeadConfig::tiny(),
        }
    }
}

/// Per-variant test PCK over seeds, gaps, and the paired tests against the
/// random-initialization baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyComparison {
    pub baseline: Vec<f64>,
    pub s_variant: Vec<f64>,
    pub b_variant: Vec<f64>,
    pub baseline_mean: f64,
    pub s_mean: f64,
    pub b_mean: f64,
    pub s_gap: f64,
    pub b_gap: f64,
    pub s_ttest: Option<TTestSummary>,
    pub b_ttest: Option<TTestSummary>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TTestSummary {
    pub t: f64,
    pub p_two_sided: f64,
    pub df: usize,
}

impl From<TTest> for TTestSummary {
    fn from(t: TTest) -> Self {
        TTestSummary { t: t.t, p_two_sided: t.p_two_sided, df: t.df }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Build the pose model for one variant: fresh head, encoder copied from the
/// pretraining checkpoint (or left at its random initialization).
fn pose_init_for_variant(
    variant: Variant,
    pretrained: Option<&Checkpoint>,
    vit: ViTConfig,
    head: HeadConfig,
    seed: u64,
) -> Result<Checkpoint, TrainError> {
    let fresh = init_vitpose_checkpoint(vit, head, derive_seed(&[seed, TAG_POSE_INIT]))?;
    match pretrained {
        None => {
            let mut ckpt = fresh;
            ckpt.push_stage(StageRecord {
                stage: "init".into(),
                dataset: variant.tag().into(),
                epochs: 0,
                seed,
            });
            Ok(ckpt)
        }
        Some(src) => Ok(init_encoder_from(
            src,
            fresh,
            StageRecord { stage: "init-encoder".into(), dataset: variant.tag().into(), epochs: 0, seed },
        )?),
    }
}

/// Run the S/B-versus-baseline comparison over the configured seeds.
///
/// Each seed generates fresh corpora, pretrains the S and B encoders,
/// fine-tunes all three variants with identical settings on one
/// cross-validation split, and scores the held-out test fold.
pub fn hierarchy_comparison(cfg: &HierarchyConfig) -> Result<HierarchyComparison, TrainError> {
    let mut baseline = Vec::new();
    let mut s_variant = Vec::new();
    let mut b_variant = Vec::new();

    for &seed in &cfg.seeds {
        let smal = generate_dataset(cfg.smal_poses, derive_seed(&[seed, TAG_SMAL]), Source::SmalLike)?;
        let sim = generate_dataset(cfg.sim_poses, derive_seed(&[seed, TAG_SIM]), Source::SynthSim)?;
        let real = generate_dataset(cfg.real_poses, derive_seed(&[seed, TAG_REAL]), Source::SlpLike)?;

        let fresh_mae = init_mae_checkpoint(cfg.vit, cfg.mae, seed)?;
        let (s_ckpt, _) = pretrain_mae(&fresh_mae, &sim, cfg.stage_epochs, &cfg.pretrain, "sim", seed)?;
        // The B variant continues from the S stage with encoder and decoder.
        let (b_ckpt, _) = pretrain_mae(
            &s_ckpt,
            &real,
            cfg.stage_epochs,
            &cfg.pretrain,
            "real",
            derive_seed(&[seed, 2]),
        )?;

        let folds = make_folds(&smal, 5, derive_seed(&[seed, TAG_FOLDS]))?;
        let plan = SplitPlan::new(folds, 0, 1)?;
        let (train, val, test) = assemble_split(&smal, &plan)?;

        let run = |variant: Variant, pretrained: Option<&Checkpoint>| -> Result<f64, TrainError> {
            let init = pose_init_for_variant(variant, pretrained, cfg.vit, cfg.head, seed)?;
            let ft_cfg = TrainConfig { seed: derive_seed(&[seed, 0xf7]), ..cfg.finetune.clone() };
            let out = finetune(&init, &train, &val, &ft_cfg, ModalityMask::Both, "smal-like")?;
            Ok(evaluate_pose_model(&out.model, &test, ModalityMask::Both, cfg.finetune.threads)?.mean_pck)
        };
        baseline.push(run(Variant::Baseline, None)?);
        s_variant.push(run(Variant::S, Some(&s_ckpt))?);
        b_variant.push(run(Variant::B, Some(&b_ckpt))?);
    }

    let (bm, sm, bbm) = (mean(&baseline), mean(&s_variant), mean(&b_variant));
    let s_ttest = paired_t_test(&s_variant, &baseline).ok().map(Into::into);
    let b_ttest = paired_t_test(&b_variant, &baseline).ok().map(Into::into);
    Ok(HierarchyComparison {
        baseline,
        s_variant,
        b_variant,
        baseline_mean: bm,
        s_mean: sm,
        b_mean: bbm,
        s_gap: sm - bm,
        b_gap: bbm - bm,
        s_ttest,
        b_ttest,
    })
}

/// Desk-scale settings for the modality/training-data ablation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub smal_poses: usize,
    pub slp_poses: usize,
    pub sim_poses: usize,
    pub pretrain_epochs: usize,
    pub pretrain: PretrainConfig,
    pub slp_cfg: TrainConfig,
    pub smal_cfg: TrainConfig,
    pub vit: ViTConfig,
    pub mae: MaeConfig,
    pub head: HeadConfig,
}

impl AblationConfig {
    pub fn desk(seeds: Vec<u64>, threads: usize) -> Self {
        AblationConfig {
            seeds,
            smal_poses: 30,
            slp_poses: 30,
            sim_poses: 60,
            pretrain_epochs: 10,
            pretrain: PretrainConfig {
                batch_size: 32,
                base_lr: 1.5e-3,
                warmup: 3,
                holdout_frac: 0.1,
                threads,
            },
            slp_cfg: TrainConfig::slp_stage(0).desk(16, 8).with_threads(threads),
            smal_cfg: TrainConfig::smal_stage(0).desk(12, 10).with_lr(1e-3).with_threads(threads),
            vit: ViTConfig::tiny(),
            mae: MaeConfig::tiny(),
            head: HeadConfig::tiny(),
        }
    }
}

/// One cell of the ablation table: a model row, a training-data regime, and
/// an input modality, with per-seed test PCK.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub model: String,
    pub with_slp_stage: bool,
    pub modality: ModalityMask,
    pub per_seed_pck: Vec<f64>,
    pub mean_pck: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, model: &str, with_slp: bool, modality: ModalityMask) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.with_slp_stage == with_slp && c.modality == modality)
    }

    /// Mean PCK for a modality across model rows and regimes (per-seed means
    /// averaged with equal weight).
    pub fn modality_mean(&self, modality: ModalityMask) -> f64 {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.modality == modality)
            .map(|c| c.mean_pck)
            .collect();
        mean(&values)
    }

    pub fn model_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for c in &self.cells {
            if !rows.contains(&c.model) {
                rows.push(c.model.clone());
            }
        }
        rows
    }
}

/// Run the full ablation grid: {baseline, pretrained} model rows x
/// {with, without} the adult fine-tuning stage x three modality masks,
/// averaged over seeds.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationTable, TrainError> {
    let rows = ["baseline", "pretrained-sim"];
    let regimes = [true, false];
    let modalities = ModalityMask::ALL;

    let mut per_cell: std::collections::BTreeMap<(usize, usize, usize), Vec<f64>> =
        std::collections::BTreeMap::new();

    for &seed in &cfg.seeds {
        let smal = generate_dataset(cfg.smal_poses, derive_seed(&[seed, TAG_SMAL]), Source::SmalLike)?;
        let slp = generate_dataset(cfg.slp_poses, derive_seed(&[seed, TAG_SLP]), Source::SlpLike)?;
        let sim = generate_dataset(cfg.sim_poses, derive_seed(&[seed, TAG_SIM]), Source::SynthSim)?;
        let slp_train_poses = (cfg.slp_poses * 4) / 5;

        let fresh_mae = init_mae_checkpoint(cfg.vit, cfg.mae, seed)?;
        let (s_ckpt, _) =
            pretrain_mae(&fresh_mae, &sim, cfg.pretrain_epochs, &cfg.pretrain, "sim", seed)?;

        let folds = make_folds(&smal, 5, derive_seed(&[seed, TAG_FOLDS]))?;
        let plan = SplitPlan::new(folds, 0, 1)?;
        let (_, _, test) = assemble_split(&smal, &plan)?;

        for (ri, row) in rows.iter().enumerate() {
            let pretrained = match ri {
                0 => None,
                _ => Some(&s_ckpt),
            };
            let variant = if ri == 0 { Variant::Baseline } else { Variant::S };
            for (gi, &with_slp) in regimes.iter().enumerate() {
                for (mi, &modality) in modalities.iter().enumerate() {
                    let init = pose_init_for_variant(variant, pretrained, cfg.vit, cfg.head, seed)?;
                    let slp_cfg = TrainConfig { seed: derive_seed(&[seed, 0x51]), ..cfg.slp_cfg.clone() };
                    let smal_cfg = TrainConfig { seed: derive_seed(&[seed, 0x52]), ..cfg.smal_cfg.clone() };
                    let outcome = two_stage_finetune(
                        &init,
                        with_slp.then_some((&slp, slp_train_poses)),
                        &slp_cfg,
                        &smal,
                        &smal_cfg,
                        &plan,
                        modality,
                    )?;
                    let pck = evaluate_pose_model(&outcome.model, &test, modality, cfg.smal_cfg.threads)?
                        .mean_pck;
                    per_cell.entry((ri, gi, mi)).or_default().push(pck);
                    let _ = row;
                }
            }
        }
    }

    let mut cells = Vec::new();
    for (ri, row) in rows.iter().enumerate() {
        for (gi, &with_slp) in regimes.iter().enumerate() {
            for (mi, &modality) in modalities.iter().enumerate() {
                let per_seed = per_cell.remove(&(ri, gi, mi)).unwrap_or_default();
                let mean_pck = mean(&per_seed);
                cells.push(AblationCell {
                    model: row.to_string(),
                    with_slp_stage: with_slp,
                    modality,
                    per_seed_pck: per_seed,
                    mean_pck,
                });
            }
        }
    }
    Ok(AblationTable { cells })
}

/// Render the ablation table: model rows against the two training regimes,
/// three modality columns each.
pub fn render_ablation_text(table: &AblationTable) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "[modality and training-data ablation: mean test PCK]").unwrap();
    writeln!(
        out,
        "{:<16}|{:^27}|{:^27}",
        "", "SLP-like + SMaL-like", "SMaL-like only"
    )
    .unwrap();
    writeln!(
        out,
        "{:<16}|{:>8}{:>9}{:>9}  |{:>8}{:>9}{:>9}",
        "Model", "Both", "Depth", "PSM", "Both", "Depth", "PSM"
    )
    .unwrap();
    for model in table.model_rows() {
        let get = |with_slp: bool, m: ModalityMask| {
            table
                .cell(&model, with_slp, m)
                .map(|c| c.mean_pck)
                .unwrap_or(f64::NAN)
        };
        writeln!(
            out,
            "{:<16}|{:>8.2}{:>9.2}{:>9.2}  |{:>8.2}{:>9.2}{:>9.2}",
            model,
            get(true, ModalityMask::Both),
            get(true, ModalityMask::DepthOnly),
            get(true, ModalityMask::PsmOnly),
            get(false, ModalityMask::Both),
            get(false, ModalityMask::DepthOnly),
            get(false, ModalityMask::PsmOnly),
        )
        .unwrap();
    }
    out
}
