//! Masked-autoencoder forward pass and loss.

use super::vit::{
    encode_batch, encoder_norm, patchify, project_patches, sinusoidal_pos_embed, transformer_block,
};
use super::{MaeConfig, ModelError, ParamStore, ViTConfig};
use crate::numerics::{Element, Tensor};
use crate::rng::Rng;

/// Uniform random partition of patch indices into (visible, masked), both
/// sorted ascending. The visible count is `round(n * (1 - mask_ratio))`.
pub fn mae_mask(
    n_patches: usize,
    mask_ratio: f64,
    rng_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if !(0.0..1.0).contains(&mask_ratio) || mask_ratio == 0.0 {
        return Err(ModelError::Config(format!("mask ratio {mask_ratio} outside (0, 1)")));
    }
    let n_visible = (n_patches as f64 * (1.0 - mask_ratio)).round() as usize;
    let mut perm: Vec<usize> = (0..n_patches).collect();
    Rng::new(rng_seed).shuffle(&mut perm);
    let mut visible = perm[..n_visible].to_vec();
    let mut masked = perm[n_visible..].to_vec();
    visible.sort_unstable();
    masked.sort_unstable();
    Ok((visible, masked))
}

/// MAE forward: encode the visible patches only, then reconstruct every
/// patch from scattered encodings plus a learned mask embedding.
///
/// Returns the per-patch pixel reconstruction `[n_patches, patch_dim]` and
/// the masked index set.
pub fn mae_forward<E: Element>(
    cfg: &ViTConfig,
    mcfg: &MaeConfig,
    store: &ParamStore<E>,
    image: &Tensor<E>,
    rng_seed: u64,
    train: bool,
) -> Result<(Tensor<E>, Vec<usize>), ModelError> {
    let (recon, mut masked) = mae_forward_batch(
        cfg,
        mcfg,
        store,
        std::slice::from_ref(image),
        &[rng_seed],
        train,
    )?;
    Ok((recon, masked.pop().expect("batch of one")))
}

/// Batched MAE forward over stacked samples.
///
/// The reconstruction comes back as `[batch * n_patches, patch_dim]` with
/// each sample's rows contiguous; masked index sets are per sample in local
/// (0..n_patches) coordinates.
pub fn mae_forward_batch<E: Element>(
    cfg: &ViTConfig,
    mcfg: &MaeConfig,
    store: &ParamStore<E>,
    images: &[Tensor<E>],
    rng_seeds: &[u64],
    train: bool,
) -> Result<(Tensor<E>, Vec<Vec<usize>>), ModelError> {
    cfg.validate()?;
    let batch = images.len();
    if batch == 0 || rng_seeds.len() != batch {
        return Err(ModelError::Config(format!(
            "{batch} images with {} seeds",
            rng_seeds.len()
        )));
    }
    let n_patches = cfg.n_patches();

    let mut visible_sets = Vec::with_capacity(batch);
    let mut masked_sets = Vec::with_capacity(batch);
    let mut visible_parts = Vec::with_capacity(batch);
    for (image, &seed) in images.iter().zip(rng_seeds) {
        let patches = patchify(image, cfg)?;
        let (visible, masked) = mae_mask(n_patches, mcfg.mask_ratio, seed)?;
        visible_parts.push(patches.gather_rows(&visible)?);
        visible_sets.push(visible);
        masked_sets.push(masked);
    }
    let vis_patches = Tensor::concat_rows(&visible_parts)?;

    // Encoder sees the visible subsets only.
    let projected = project_patches(cfg, store, &vis_patches, train)?;
    let visible_refs: Vec<&[usize]> = visible_sets.iter().map(|v| v.as_slice()).collect();
    let encoded = encode_batch(cfg, store, &projected, batch, Some(&visible_refs), train)?;
    let encoded = encoder_norm(&encoded, store, train)?;

    // Decoder input: embedded visible encodings at their original positions,
    // the mask embedding everywhere else, plus decoder position embeddings.
    let dw = mcfg.decoder_width;
    let embed_w = store.leaf("decoder.embed.weight", train)?;
    let embed_b = store.leaf("decoder.embed.bias", train)?;
    let vis_tokens = encoded.matmul(&embed_w)?.add_bias(&embed_b)?;

    let total_rows = batch * n_patches;
    let vis_offsets: Vec<usize> = visible_sets
        .iter()
        .enumerate()
        .flat_map(|(b, set)| set.iter().map(move |&i| b * n_patches + i))
        .collect();
    let scattered_vis = vis_tokens.scatter_rows(&vis_offsets, total_rows)?;

    let mask_offsets: Vec<usize> = masked_sets
        .iter()
        .enumerate()
        .flat_map(|(b, set)| set.iter().map(move |&i| b * n_patches + i))
        .collect();
    let mask_token = store.leaf("decoder.mask_token", train)?.reshape(&[1, dw])?;
    let ones = Tensor::constant(vec![E::ONE; mask_offsets.len()], &[mask_offsets.len(), 1])?;
    let mask_tokens = ones.matmul(&mask_token)?;
    let scattered_mask = mask_tokens.scatter_rows(&mask_offsets, total_rows)?;

    let dec_pos_table = sinusoidal_pos_embed::<E>(n_patches, dw)?;
    let tiled: Vec<usize> = (0..batch).flat_map(|_| 0..n_patches).collect();
    let dec_pos = dec_pos_table.gather_rows(&tiled)?;

    let mut x = scattered_vis.add(&scattered_mask)?.add(&dec_pos)?;
    for b in 0..mcfg.decoder_blocks {
        x = transformer_block(
            &x,
            store,
            &format!("decoder.blocks.{b}"),
            dw,
            decoder_heads(dw),
            batch,
            n_patches,
            train,
        )
        .map_err(|e| match e {
            ModelError::Numerics(source) => ModelError::Block { index: b, source },
            other => other,
        })?;
    }
    let x = {
        let gamma = store.leaf("decoder_norm.gamma", train)?;
        let beta = store.leaf("decoder_norm.beta", train)?;
        x.layernorm(&gamma, &beta, 1e-6)?
    };
    let pred_w = store.leaf("decoder.pred.weight", train)?;
    let pred_b = store.leaf("decoder.pred.bias", train)?;
    let reconstruction = x.matmul(&pred_w)?.add_bias(&pred_b)?;
    Ok((reconstruction, masked_sets))
}

pub(crate) fn decoder_heads(decoder_width: usize) -> usize {
    // Keep a 16-wide head dimension when possible, mirroring the encoder.
    for heads in [decoder_width / 16, 8, 4, 2, 1] {
        if heads > 0 && decoder_width % heads == 0 {
            return heads;
        }
    }
    1
}

/// Mean squared error over the masked patches only; predictions of visible
/// patches are ignored. An empty masked set yields zero with a warning.
pub fn mae_loss<E: Element>(
    reconstruction: &Tensor<E>,
    target_patches: &Tensor<E>,
    masked: &[usize],
) -> Result<Tensor<E>, ModelError> {
    if masked.is_empty() {
        eprintln!("warning: mae_loss over an empty masked set, defining loss = 0");
        return Ok(Tensor::scalar(E::ZERO));
    }
    let pred = reconstruction.gather_rows(masked)?;
    let target = target_patches.gather_rows(masked)?;
    Ok(pred.mse(&target)?)
}

/// Batched masked loss: samples are stacked along rows, `masked` holds each
/// sample's local indices. Every sample masks the same patch count, so this
/// equals the mean of the per-sample losses.
pub fn mae_loss_batch<E: Element>(
    reconstruction: &Tensor<E>,
    target_patches: &Tensor<E>,
    masked: &[Vec<usize>],
    n_patches: usize,
) -> Result<Tensor<E>, ModelError> {
    let offsets: Vec<usize> = masked
        .iter()
        .enumerate()
        .flat_map(|(b, set)| set.iter().map(move |&i| b * n_patches + i))
        .collect();
    mae_loss(reconstruction, target_patches, &offsets)
}
