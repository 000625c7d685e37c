//! Masked-autoencoder pretraining and the hierarchical stage variants.

use serde::{Deserialize, Serialize};

use crate::data::{preprocess, Dataset, ModalityMask, Sample};
use crate::model::{
    init_mae_checkpoint, mae_forward_batch, mae_loss_batch, patchify, Checkpoint, MaeConfig,
    StageRecord, ViTConfig,
};
use crate::numerics::{backward, AdamWHyper, AdamWState, Tensor};
use crate::parallel::{effective_threads, par_map};
use crate::rng::{derive_seed, Rng};

use super::engine::{apply_step, effective_schedule, reduce_chunks, worker_chunks, EVAL_CHUNK};
use super::{EpochLog, RunLog, StagePlan, TrainError, Variant};

const TAG_SHUFFLE: u64 = 0x6d73_6866;
const TAG_MASK: u64 = 0x6d61_736b;
const TAG_HOLDOUT: u64 = 0x686f_6c64;

/// Masked-autoencoder pretraining settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup: usize,
    /// Fraction of samples held out for the per-epoch reconstruction probe.
    pub holdout_frac: f64,
    pub threads: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { batch_size: 64, base_lr: 1.5e-3, warmup: 5, holdout_frac: 0.1, threads: 0 }
    }
}

fn holdout_split(samples: &[Sample], frac: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n_holdout = ((samples.len() as f64 * frac) as usize).clamp(1, samples.len() / 2 + 1);
    let split = samples.len() - n_holdout;
    (samples[..split].to_vec(), samples[split..].to_vec())
}

/// Masked-patch reconstruction MSE over a held-out set, with masks fixed per
/// sample so the probe is comparable across epochs. Chunk sizes are fixed,
/// so the value does not depend on the thread setting.
fn holdout_loss(
    ckpt: &Checkpoint,
    mae: &MaeConfig,
    holdout: &[Sample],
    seed: u64,
    threads: usize,
) -> Result<f64, TrainError> {
    let n_patches = ckpt.vit.n_patches();
    let indexed: Vec<(usize, &Sample)> = holdout.iter().enumerate().collect();
    let chunks: Vec<&[(usize, &Sample)]> = indexed.chunks(EVAL_CHUNK).collect();
    let losses = par_map(&chunks, effective_threads(Some(threads)), |_, chunk| -> Result<(f64, usize), TrainError> {
        let images: Vec<Tensor<f32>> = chunk
            .iter()
            .map(|(_, s)| preprocess::<f32>(s, ModalityMask::Both))
            .collect();
        let seeds: Vec<u64> = chunk
            .iter()
            .map(|(i, _)| derive_seed(&[seed, TAG_HOLDOUT, *i as u64]))
            .collect();
        let (recon, masked) =
            mae_forward_batch(&ckpt.vit, mae, &ckpt.params, &images, &seeds, false)?;
        let target_parts: Vec<Tensor<f32>> = images
            .iter()
            .map(|img| patchify(img, &ckpt.vit))
            .collect::<Result<_, _>>()?;
        let targets = Tensor::concat_rows(&target_parts)?;
        let loss = mae_loss_batch(&recon, &targets, &masked, n_patches)?;
        Ok((loss.item() as f64, chunk.len()))
    });
    let mut total = 0.0;
    for l in losses {
        let (loss, count) = l?;
        total += loss * count as f64;
    }
    Ok(total / holdout.len() as f64)
}

/// Pretrain a masked autoencoder on a dataset.
///
/// Minimizes the masked-patch MSE with AdamW under the warmup-cosine
/// schedule, logging train and held-out loss per epoch. A non-finite loss
/// aborts the run and returns the last end-of-epoch checkpoint.
pub fn pretrain_mae(
    init: &Checkpoint,
    dataset: &Dataset,
    epochs: usize,
    cfg: &PretrainConfig,
    dataset_tag: &str,
    seed: u64,
) -> Result<(Checkpoint, RunLog), TrainError> {
    if dataset.samples.is_empty() {
        return Err(TrainError::EmptySplit("pretraining"));
    }
    crate::parallel::tune_allocator();
    let mae = init
        .mae
        .ok_or_else(|| TrainError::Invalid("checkpoint has no decoder config".into()))?;
    let mut log = RunLog {
        stage: "mae".into(),
        dataset: dataset_tag.to_string(),
        epochs: Vec::new(),
        diverged: false,
        best_epoch: None,
    };
    let mut current = init.clone();
    current.push_stage(StageRecord {
        stage: "mae".into(),
        dataset: dataset_tag.to_string(),
        epochs,
        seed,
    });
    if epochs == 0 {
        return Ok((current, log));
    }

    let (train, holdout) = holdout_split(&dataset.samples, cfg.holdout_frac);
    let schedule = effective_schedule(cfg.base_lr, cfg.warmup, epochs)?;
    let mut state = AdamWState::new(&current.params.param_lens());
    let hyper_base = AdamWHyper::default();
    let workers = effective_threads(Some(cfg.threads));
    let n_patches = current.vit.n_patches();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size.max(1));

    let mut last_good = current.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..epochs {
        let mut rng = Rng::new(derive_seed(&[seed, TAG_SHUFFLE, epoch as u64]));
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_lr = 0.0;
        let mut failed = false;
        'steps: for (step, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let lr = schedule.lr_at(epoch as f64 + step as f64 / steps_per_epoch as f64)?;
            epoch_lr = lr;
            let store = &current.params;
            let vit = current.vit;
            let chunks = worker_chunks(batch, workers);
            let results = par_map(&chunks, workers, |_, chunk| {
                let images: Vec<Tensor<f32>> = chunk
                    .iter()
                    .map(|&ix| preprocess::<f32>(&train[ix], ModalityMask::Both))
                    .collect();
                let seeds: Vec<u64> = chunk
                    .iter()
                    .map(|&ix| derive_seed(&[seed, TAG_MASK, epoch as u64, ix as u64]))
                    .collect();
                let (recon, masked) = mae_forward_batch(&vit, &mae, store, &images, &seeds, true)?;
                let target_parts: Vec<Tensor<f32>> = images
                    .iter()
                    .map(|img| patchify(img, &vit))
                    .collect::<Result<_, _>>()?;
                let targets = Tensor::concat_rows(&target_parts)?;
                let loss = mae_loss_batch(&recon, &targets, &masked, n_patches)?;
                let grads = backward(&loss)?;
                Ok((loss.item() as f64, grads, chunk.len()))
            });
            let (loss, grads) = match reduce_chunks(results, batch.len()) {
                Ok(ok) => ok,
                Err(_) => {
                    failed = true;
                    break 'steps;
                }
            };
            if !loss.is_finite()
                || apply_step(
                    &mut current.params,
                    &grads,
                    &mut state,
                    &AdamWHyper { lr, ..hyper_base },
                )
                .is_err()
            {
                failed = true;
                break 'steps;
            }
            epoch_loss += loss * batch.len() as f64;
        }
        if failed {
            log.diverged = true;
            return Ok((last_good, log));
        }
        let probe = holdout_loss(&current, &mae, &holdout, seed, cfg.threads)?;
        log.epochs.push(EpochLog {
            epoch,
            lr: epoch_lr,
            train_loss: epoch_loss / train.len() as f64,
            holdout_loss: Some(probe),
            val_pck: None,
        });
        last_good = current.clone();
    }
    Ok((current, log))
}

/// Execute a hierarchical pretraining plan.
///
/// `Baseline` returns the fresh initialization untouched apart from its
/// lineage entry; `S`/`R` pretrain on one corpus; `B` pretrains on the
/// simulated corpus and continues on the real one, carrying encoder and
/// decoder parameters into the second stage.
pub fn run_hierarchy(
    plan: &StagePlan,
    simulated: Option<&Dataset>,
    real: Option<&Dataset>,
    vit: ViTConfig,
    mae: MaeConfig,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(Checkpoint, Vec<RunLog>), TrainError> {
    let fresh = init_mae_checkpoint(vit, mae, seed)?;
    match plan.variant {
        Variant::Baseline => {
            let mut ckpt = fresh;
            ckpt.push_stage(StageRecord {
                stage: "baseline".into(),
                dataset: "none".into(),
                epochs: 0,
                seed,
            });
            Ok((ckpt, Vec::new()))
        }
        Variant::S => {
            let sim = simulated.ok_or(TrainError::MissingDataset("simulated"))?;
            let (ckpt, log) = pretrain_mae(&fresh, sim, plan.epochs_per_stage, cfg, "sim", seed)?;
            Ok((ckpt, vec![log]))
        }
        Variant::R => {
            let real = real.ok_or(TrainError::MissingDataset("real"))?;
            let (ckpt, log) = pretrain_mae(&fresh, real, plan.epochs_per_stage, cfg, "real", seed)?;
            Ok((ckpt, vec![log]))
        }
        Variant::B => {
            let sim = simulated.ok_or(TrainError::MissingDataset("simulated"))?;
            let real = real.ok_or(TrainError::MissingDataset("real"))?;
            let (stage1, log1) = pretrain_mae(&fresh, sim, plan.epochs_per_stage, cfg, "sim", seed)?;
            // Stage 2 continues from stage 1: encoder and decoder both carry over.
            let (stage2, log2) =
                pretrain_mae(&stage1, real, plan.epochs_per_stage, cfg, "real", derive_seed(&[seed, 2]))?;
            Ok((stage2, vec![log1, log2]))
        }
    }
}
