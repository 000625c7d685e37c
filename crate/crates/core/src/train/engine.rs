//! Shared training machinery: batched forward graphs, chunk-parallel
//! gradient accumulation, optimizer stepping, pose prediction, and PCK
//! evaluation.
//!
//! Each optimizer step stacks its samples into one gradient graph per worker
//! chunk; chunk results reduce sequentially in order, so a run is fully
//! determined by (seed, configs, thread setting).

use crate::data::{augment, preprocess, ModalityMask, Pose, Sample};
use crate::eval::{pck, MetricConfig};
use crate::heatmap::{decode, encode, HeatmapStack};
use crate::model::{vitpose_forward_batch, Checkpoint, ParamStore};
use crate::numerics::{
    adamw_step, backward, AdamWHyper, AdamWState, Gradients, LrSchedule, NumericsError, Tensor,
};
use crate::parallel::{effective_threads, par_map};
use crate::rng::{derive_seed, Rng};

use super::{EpochLog, RunLog, TrainConfig, TrainError};

const TAG_SHUFFLE: u64 = 0x7368_7566;
const TAG_AUG: u64 = 0x6175_6700;

/// Fixed-size slices for inference batching (independent of worker count,
/// so evaluation results never depend on the thread setting).
pub(crate) const EVAL_CHUNK: usize = 16;

/// Largest number of samples sharing one forward graph; bounds graph memory
/// however large the optimizer batch is.
pub(crate) const MICRO_BATCH: usize = 8;

/// Split a batch into contiguous micro-batches: one chunk per worker, each
/// capped at [`MICRO_BATCH`] samples.
pub(crate) fn worker_chunks<T>(items: &[T], workers: usize) -> Vec<&[T]> {
    let chunk = items
        .len()
        .div_ceil(workers.max(1))
        .clamp(1, MICRO_BATCH);
    items.chunks(chunk).collect()
}

/// Reduce per-chunk (loss, gradients, count) into batch-mean loss and
/// batch-mean gradients, in chunk order.
pub(crate) fn reduce_chunks(
    results: Vec<Result<(f64, Gradients<f32>, usize), TrainError>>,
    total: usize,
) -> Result<(f64, Gradients<f32>), TrainError> {
    let mut total_loss = 0.0;
    let mut accumulated: Option<Gradients<f32>> = None;
    for result in results {
        let (loss, mut grads, count) = result?;
        let weight = count as f64 / total as f64;
        total_loss += loss * weight;
        grads.scale(weight);
        match accumulated.as_mut() {
            Some(acc) => acc.accumulate(&grads),
            None => accumulated = Some(grads),
        }
    }
    let grads = accumulated.ok_or(TrainError::EmptySplit("batch"))?;
    Ok((total_loss, grads))
}

/// Apply one AdamW step from accumulated gradients.
pub(crate) fn apply_step(
    store: &mut ParamStore<f32>,
    grads: &Gradients<f32>,
    state: &mut AdamWState<f32>,
    hyper: &AdamWHyper,
) -> Result<(), NumericsError> {
    let grad_slices: Vec<Option<&[f32]>> = (0..store.len()).map(|id| grads.get(id)).collect();
    let mut params = store.all_values_mut();
    adamw_step(&mut params, &grad_slices, state, hyper)
}

pub(crate) fn effective_schedule(
    base_lr: f64,
    warmup: usize,
    epochs: usize,
) -> Result<LrSchedule, TrainError> {
    let warmup = warmup.min(epochs.saturating_sub(1));
    Ok(LrSchedule::new(base_lr, warmup, epochs.max(1))?)
}

fn pose_model_parts(model: &Checkpoint) -> Result<crate::model::HeadConfig, TrainError> {
    model
        .head
        .ok_or_else(|| TrainError::Invalid("checkpoint has no pose head".into()))
}

/// Predict a pose for one sample (no augmentation, no gradients).
pub fn predict_pose(
    model: &Checkpoint,
    sample: &Sample,
    modality: ModalityMask,
) -> Result<Pose, TrainError> {
    let head = pose_model_parts(model)?;
    let image = preprocess::<f32>(sample, modality);
    let out = crate::model::vitpose_forward(&model.vit, &head, &model.params, &image, false)?;
    let maps = HeatmapStack::from_tensor(&out)?;
    Ok(decode(&maps).pose)
}

/// Batched prediction over many samples.
pub fn predict_poses(
    model: &Checkpoint,
    samples: &[Sample],
    modality: ModalityMask,
    threads: usize,
) -> Result<Vec<Pose>, TrainError> {
    crate::parallel::tune_allocator();
    let head = pose_model_parts(model)?;
    let workers = effective_threads(Some(threads));
    let chunks: Vec<&[Sample]> = samples.chunks(EVAL_CHUNK).collect();
    let results = par_map(&chunks, workers, |_, chunk| -> Result<Vec<Pose>, TrainError> {
        let images: Vec<Tensor<f32>> =
            chunk.iter().map(|s| preprocess::<f32>(s, modality)).collect();
        let outs = vitpose_forward_batch(&model.vit, &head, &model.params, &images, false)?;
        outs.iter()
            .map(|out| {
                let maps = HeatmapStack::from_tensor(out)?;
                Ok(decode(&maps).pose)
            })
            .collect()
    });
    let mut poses = Vec::with_capacity(samples.len());
    for chunk in results {
        poses.extend(chunk?);
    }
    Ok(poses)
}

/// Evaluation over a sample list: decoded predictions and mean PCK.
pub struct PoseEvalOutcome {
    pub predictions: Vec<Pose>,
    pub mean_pck: f64,
}

pub fn evaluate_pose_model(
    model: &Checkpoint,
    samples: &[Sample],
    modality: ModalityMask,
    threads: usize,
) -> Result<PoseEvalOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let predictions = predict_poses(model, samples, modality, threads)?;
    let gts: Vec<Pose> = samples.iter().map(|s| s.pose.clone()).collect();
    let mean_pck = pck(&predictions, &gts, &MetricConfig::default())?.mean;
    Ok(PoseEvalOutcome { predictions, mean_pck })
}

/// Heatmap-regression training loop without validation snapshotting.
///
/// Runs `cfg.epochs` epochs of AdamW on the heatmap MSE, augmenting each
/// sample with a seed derived from (run seed, sample index, epoch). Returns
/// the trained checkpoint and the per-epoch log.
pub fn train_pose_model(
    model: &Checkpoint,
    train: &[Sample],
    cfg: &TrainConfig,
    modality: ModalityMask,
) -> Result<(Checkpoint, RunLog), TrainError> {
    train_pose_epochs(model, train, cfg, modality, |_, _| Ok(None))
}

/// Core loop; `on_epoch(epoch, model)` may record a validation metric.
pub(crate) fn train_pose_epochs(
    model: &Checkpoint,
    train: &[Sample],
    cfg: &TrainConfig,
    modality: ModalityMask,
    mut on_epoch: impl FnMut(usize, &Checkpoint) -> Result<Option<f64>, TrainError>,
) -> Result<(Checkpoint, RunLog), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    crate::parallel::tune_allocator();
    cfg.policy.validate()?;
    let head = pose_model_parts(model)?;
    let mut current = model.clone();
    let schedule = effective_schedule(cfg.base_lr, cfg.warmup, cfg.epochs)?;
    let mut state = AdamWState::new(&current.params.param_lens());
    let hyper_base = AdamWHyper::default();
    let workers = effective_threads(Some(cfg.threads));
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
    let map_size = crate::data::JOINT_COUNT * crate::heatmap::HEATMAP_SIZE * crate::heatmap::HEATMAP_SIZE;
    let mut log = RunLog {
        stage: "pose-train".into(),
        dataset: String::new(),
        epochs: Vec::new(),
        diverged: false,
        best_epoch: None,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::new(derive_seed(&[cfg.seed, TAG_SHUFFLE, epoch as u64]));
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_lr = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let lr = schedule.lr_at(epoch as f64 + step as f64 / steps_per_epoch as f64)?;
            epoch_lr = lr;
            let store = &current.params;
            let vit = current.vit;
            let chunks = worker_chunks(batch, workers);
            let results = par_map(&chunks, workers, |_, chunk| {
                let mut images = Vec::with_capacity(chunk.len());
                let mut target_data = Vec::with_capacity(chunk.len() * map_size);
                for &sample_ix in chunk.iter() {
                    let sample = &train[sample_ix];
                    let aug_seed =
                        derive_seed(&[cfg.seed, TAG_AUG, sample_ix as u64, epoch as u64]);
                    let augmented = augment(sample, &cfg.policy, aug_seed)?.sample;
                    images.push(preprocess::<f32>(&augmented, modality));
                    target_data.extend_from_slice(encode(&augmented.pose).data());
                }
                let outs = vitpose_forward_batch(&vit, &head, store, &images, true)?;
                let flat: Vec<Tensor<f32>> = outs
                    .iter()
                    .map(|o| o.reshape(&[1, map_size]))
                    .collect::<Result<_, _>>()?;
                let preds = Tensor::concat_rows(&flat)?;
                let targets = Tensor::constant(target_data, &[chunk.len(), map_size])?;
                let loss = preds.mse(&targets)?;
                let grads = backward(&loss)?;
                Ok((loss.item() as f64, grads, chunk.len()))
            });
            let (loss, grads) = reduce_chunks(results, batch.len())?;
            epoch_loss += loss * batch.len() as f64;
            let hyper = AdamWHyper { lr, ..hyper_base };
            apply_step(&mut current.params, &grads, &mut state, &hyper)?;
        }
        let val_pck = on_epoch(epoch, &current)?;
        log.epochs.push(EpochLog {
            epoch,
            lr: epoch_lr,
            train_loss: epoch_loss / train.len() as f64,
            holdout_loss: None,
            val_pck,
        });
    }
    Ok((current, log))
}
