//! ViTPose-style deconvolution head.

use super::vit::{encode_batch, encoder_norm, patchify, project_patches};
use super::{HeadConfig, ModelError, ParamStore, ViTConfig};
use crate::data::JOINT_COUNT;
use crate::numerics::{Element, Tensor};

/// Per-position layer norm over channels followed by GELU, for a `[C, H, W]`
/// feature map.
fn norm_act<E: Element>(
    x: &Tensor<E>,
    store: &ParamStore<E>,
    name: &str,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let flat = x.reshape(&[c, h * w])?.transpose2d()?; // [H*W, C]
    let gamma = store.leaf(&format!("{name}.gamma"), train)?;
    let beta = store.leaf(&format!("{name}.beta"), train)?;
    let normed = flat.layernorm(&gamma, &beta, 1e-6)?.gelu()?;
    Ok(normed.transpose2d()?.reshape(&[c, h, w])?)
}

/// Upsample one sample's encoded feature grid to joint heatmaps:
/// two stride-2 transposed convolutions (14 -> 28 -> 56) and a 1x1
/// projection to one channel per joint.
fn head_forward<E: Element>(
    cfg: &ViTConfig,
    head: &HeadConfig,
    store: &ParamStore<E>,
    encoded: &Tensor<E>,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let g = cfg.grid();
    let feat = encoded.reshape(&[g, g, cfg.width])?.permute3([2, 0, 1])?; // [width, 14, 14]

    let w1 = store.leaf("head.deconv1.weight", train)?;
    let b1 = store.leaf("head.deconv1.bias", train)?;
    let x = feat.conv_transpose2d(&w1, Some(&b1), 2, 1)?;
    let x = norm_act(&x, store, "head.norm1", train)?;

    let w2 = store.leaf("head.deconv2.weight", train)?;
    let b2 = store.leaf("head.deconv2.bias", train)?;
    let x = x.conv_transpose2d(&w2, Some(&b2), 2, 1)?;
    let x = norm_act(&x, store, "head.norm2", train)?;

    // 1x1 projection to joint channels.
    let (c, h, w) = (head.channels, x.shape()[1], x.shape()[2]);
    let flat = x.reshape(&[c, h * w])?.transpose2d()?;
    let fw = store.leaf("head.final.weight", train)?;
    let fb = store.leaf("head.final.bias", train)?;
    let out = flat.matmul(&fw)?.add_bias(&fb)?; // [H*W, 14]
    Ok(out.transpose2d()?.reshape(&[JOINT_COUNT, h, w])?)
}

/// Full pose forward pass for one image; output `[14, 56, 56]`.
pub fn vitpose_forward<E: Element>(
    cfg: &ViTConfig,
    head: &HeadConfig,
    store: &ParamStore<E>,
    image: &Tensor<E>,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let mut out = vitpose_forward_batch(cfg, head, store, std::slice::from_ref(image), train)?;
    Ok(out.pop().expect("batch of one"))
}

/// Batched pose forward: one shared encoder graph over the stacked samples,
/// then the deconvolution head per sample. Returns one `[14, 56, 56]` tensor
/// per image, all belonging to one gradient graph.
pub fn vitpose_forward_batch<E: Element>(
    cfg: &ViTConfig,
    head: &HeadConfig,
    store: &ParamStore<E>,
    images: &[Tensor<E>],
    train: bool,
) -> Result<Vec<Tensor<E>>, ModelError> {
    cfg.validate()?;
    let batch = images.len();
    if batch == 0 {
        return Err(ModelError::Config("empty batch".into()));
    }
    let n_patches = cfg.n_patches();
    let parts: Vec<Tensor<E>> = images
        .iter()
        .map(|image| patchify(image, cfg))
        .collect::<Result<_, _>>()?;
    let patches = Tensor::concat_rows(&parts)?;
    let projected = project_patches(cfg, store, &patches, train)?;
    let encoded = encode_batch(cfg, store, &projected, batch, None, train)?;
    let encoded = encoder_norm(&encoded, store, train)?;

    let mut outputs = Vec::with_capacity(batch);
    for b in 0..batch {
        let rows: Vec<usize> = (b * n_patches..(b + 1) * n_patches).collect();
        let sample = encoded.gather_rows(&rows)?;
        outputs.push(head_forward(cfg, head, store, &sample, train)?);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::super::checkpoint::init_vitpose_checkpoint;
    use super::*;
    use crate::rng::Rng;

    fn image(seed: u64) -> Tensor<f32> {
        let mut rng = Rng::new(seed);
        let data: Vec<f32> = (0..224 * 224 * 3).map(|_| rng.uniform() as f32).collect();
        Tensor::constant(data, &[224, 224, 3]).unwrap()
    }

    #[test]
    fn output_shape_is_14x56x56() {
        let cfg = ViTConfig::tiny();
        let head = HeadConfig::tiny();
        let ckpt = init_vitpose_checkpoint(cfg, head, 5).unwrap();
        let out = vitpose_forward(&cfg, &head, &ckpt.params, &image(1), false).unwrap();
        assert_eq!(out.shape(), &[14, 56, 56]);
    }

    #[test]
    fn batched_forward_matches_single() {
        let cfg = ViTConfig::tiny();
        let head = HeadConfig::tiny();
        let ckpt = init_vitpose_checkpoint(cfg, head, 6).unwrap();
        let images = [image(2), image(3)];
        let batched = vitpose_forward_batch(&cfg, &head, &ckpt.params, &images, false).unwrap();
        assert_eq!(batched.len(), 2);
        for (img, out) in images.iter().zip(&batched) {
            let single = vitpose_forward(&cfg, &head, &ckpt.params, img, false).unwrap();
            assert_eq!(out.shape(), single.shape());
            for (a, b) in out.data().iter().zip(single.data()) {
                assert!((a - b).abs() < 2e-4, "batched {a} vs single {b}");
            }
        }
    }
}
