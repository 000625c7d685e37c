//! Patchification, sinusoidal position embeddings, and the pre-norm
//! transformer encoder.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::{ModelError, ParamStore, ViTConfig};
use crate::numerics::{Element, NumericsError, Tensor};

/// Flat index maps for the patch layout, cached per (image_size, patch_size)
/// since they are rebuilt on every forward pass otherwise.
fn patch_index_maps(cfg: &ViTConfig) -> (Arc<Vec<usize>>, Arc<Vec<usize>>) {
    type Cache = Mutex<HashMap<(usize, usize), (Arc<Vec<usize>>, Arc<Vec<usize>>)>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (cfg.image_size, cfg.patch_size);
    if let Some(found) = cache.lock().unwrap().get(&key) {
        return found.clone();
    }
    let g = cfg.grid();
    let p = cfg.patch_size;
    let n = cfg.image_size;
    let mut forward = Vec::with_capacity(g * g * cfg.patch_dim());
    let mut inverse = vec![0usize; n * n * 3];
    for gy in 0..g {
        for gx in 0..g {
            for py in 0..p {
                for px in 0..p {
                    for c in 0..3 {
                        let image_flat = ((gy * p + py) * n + gx * p + px) * 3 + c;
                        inverse[image_flat] = forward.len();
                        forward.push(image_flat);
                    }
                }
            }
        }
    }
    let entry = (Arc::new(forward), Arc::new(inverse));
    cache.lock().unwrap().insert(key, entry.clone());
    entry
}

/// Split a `[H, W, 3]` image into non-overlapping flattened patches,
/// `[n_patches, patch_size^2 * 3]`, in row-major patch order.
pub fn patchify<E: Element>(image: &Tensor<E>, cfg: &ViTConfig) -> Result<Tensor<E>, ModelError> {
    cfg.validate()?;
    let expect = [cfg.image_size, cfg.image_size, 3];
    if image.shape() != expect {
        return Err(NumericsError::ShapeMismatch {
            op: "patchify",
            lhs: image.shape().to_vec(),
            rhs: expect.to_vec(),
        }
        .into());
    }
    let (forward, _) = patch_index_maps(cfg);
    Ok(image.gather_flat(&forward, &[cfg.n_patches(), cfg.patch_dim()])?)
}

/// Inverse of [`patchify`].
pub fn unpatchify<E: Element>(patches: &Tensor<E>, cfg: &ViTConfig) -> Result<Tensor<E>, ModelError> {
    cfg.validate()?;
    let n = cfg.image_size;
    let expect = [cfg.n_patches(), cfg.patch_dim()];
    if patches.shape() != expect {
        return Err(NumericsError::ShapeMismatch {
            op: "unpatchify",
            lhs: patches.shape().to_vec(),
            rhs: expect.to_vec(),
        }
        .into());
    }
    let (_, inverse) = patch_index_maps(cfg);
    Ok(patches.gather_flat(&inverse, &[n, n, 3])?)
}

/// Fixed sine/cosine position embedding.
///
/// Perfect-square position counts get the 2-D grid form (half the channels
/// encode x, half y); other counts fall back to the 1-D form. Values lie in
/// [-1, 1] and the table is a pure function of its arguments.
pub fn sinusoidal_pos_embed<E: Element>(n_positions: usize, dim: usize) -> Result<Tensor<E>, ModelError> {
    if dim == 0 || dim % 2 != 0 {
        return Err(ModelError::Config(format!("position embedding dim {dim} must be even")));
    }
    let grid = (1..=n_positions).find(|g| g * g == n_positions);
    let mut data = Vec::with_capacity(n_positions * dim);
    match grid {
        Some(g) if dim % 4 == 0 => {
            let quarter = dim / 4;
            let omega: Vec<f64> = (0..quarter)
                .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
                .collect();
            for pos in 0..n_positions {
                let (row, col) = (pos / g, pos % g);
                for &axis in &[col as f64, row as f64] {
                    for &w in &omega {
                        data.push(E::from_f64((axis * w).sin()));
                    }
                    for &w in &omega {
                        data.push(E::from_f64((axis * w).cos()));
                    }
                }
            }
        }
        _ => {
            let half = dim / 2;
            let omega: Vec<f64> = (0..half)
                .map(|i| 1.0 / 10000f64.powf(i as f64 / half as f64))
                .collect();
            for pos in 0..n_positions {
                for &w in &omega {
                    data.push(E::from_f64((pos as f64 * w).sin()));
                }
                for &w in &omega {
                    data.push(E::from_f64((pos as f64 * w).cos()));
                }
            }
        }
    }
    Ok(Tensor::constant(data, &[n_positions, dim])?)
}

/// Linear projection of flattened patches to the transformer width.
pub fn project_patches<E: Element>(
    cfg: &ViTConfig,
    store: &ParamStore<E>,
    patches: &Tensor<E>,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let w = store.leaf("patch_embed.weight", train)?;
    let b = store.leaf("patch_embed.bias", train)?;
    let _ = cfg;
    Ok(patches.matmul(&w)?.add_bias(&b)?)
}

fn linear<E: Element>(
    x: &Tensor<E>,
    store: &ParamStore<E>,
    name: &str,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let w = store.leaf(&format!("{name}.weight"), train)?;
    let b = store.leaf(&format!("{name}.bias"), train)?;
    Ok(x.matmul(&w)?.add_bias(&b)?)
}

fn layer_norm<E: Element>(
    x: &Tensor<E>,
    store: &ParamStore<E>,
    name: &str,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let gamma = store.leaf(&format!("{name}.gamma"), train)?;
    let beta = store.leaf(&format!("{name}.beta"), train)?;
    Ok(x.layernorm(&gamma, &beta, 1e-6)?)
}

fn attention<E: Element>(
    x: &Tensor<E>,
    store: &ParamStore<E>,
    prefix: &str,
    width: usize,
    heads: usize,
    batch: usize,
    tokens: usize,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let head_dim = width / heads;
    let qkv = linear(x, store, &format!("{prefix}.attn.qkv"), train)?;
    let split = |start: usize| -> Result<Tensor<E>, NumericsError> {
        qkv.slice_cols(start, width)?
            .reshape(&[batch, tokens, heads, head_dim])
    };
    // Scaling q (rather than the much larger score matrix) keeps the
    // attention algebra identical and the buffers small.
    let q = split(0)?
        .scale(1.0 / (head_dim as f64).sqrt())?
        .permute4([0, 2, 1, 3])?
        .reshape(&[batch * heads, tokens, head_dim])?;
    let k = split(width)?
        .permute4([0, 2, 3, 1])?
        .reshape(&[batch * heads, head_dim, tokens])?;
    let v = split(2 * width)?
        .permute4([0, 2, 1, 3])?
        .reshape(&[batch * heads, tokens, head_dim])?;
    let probs = q.bmm(&k)?.softmax_lastdim()?;
    let ctx = probs
        .bmm(&v)?
        .reshape(&[batch, heads, tokens, head_dim])?
        .permute4([0, 2, 1, 3])?
        .reshape(&[batch * tokens, width])?;
    linear(&ctx, store, &format!("{prefix}.attn.proj"), train)
}

/// One pre-norm transformer block over `[batch*tokens, width]` rows:
/// `x + Attn(LN(x))`, then `x + MLP(LN(x))`. Attention never crosses the
/// sample boundary.
#[allow(clippy::too_many_arguments)]
pub(crate) fn transformer_block<E: Element>(
    x: &Tensor<E>,
    store: &ParamStore<E>,
    prefix: &str,
    width: usize,
    heads: usize,
    batch: usize,
    tokens: usize,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    let attn_in = layer_norm(x, store, &format!("{prefix}.ln1"), train)?;
    let x = x.add(&attention(&attn_in, store, prefix, width, heads, batch, tokens, train)?)?;
    let mlp_in = layer_norm(&x, store, &format!("{prefix}.ln2"), train)?;
    let hidden = linear(&mlp_in, store, &format!("{prefix}.mlp.fc1"), train)?.gelu()?;
    let mlp_out = linear(&hidden, store, &format!("{prefix}.mlp.fc2"), train)?;
    Ok(x.add(&mlp_out)?)
}

fn validate_visible(idx: &[usize], n_patches: usize) -> Result<(), ModelError> {
    let mut seen = std::collections::HashSet::new();
    for &i in idx {
        if i >= n_patches || !seen.insert(i) {
            return Err(ModelError::Config(format!(
                "visible index {i} out of range or repeated"
            )));
        }
    }
    Ok(())
}

/// Run the ViT encoder blocks over projected patches.
///
/// Position embeddings are added before the first block using the patches'
/// original grid locations, so a visible-only subset keeps its geometry.
/// With zero blocks the output is exactly `projected + positions`.
pub fn encode<E: Element>(
    cfg: &ViTConfig,
    store: &ParamStore<E>,
    projected: &Tensor<E>,
    visible_idx: Option<&[usize]>,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    match visible_idx {
        None => encode_batch(cfg, store, projected, 1, None, train),
        Some(idx) => encode_batch(cfg, store, projected, 1, Some(&[idx]), train),
    }
}

/// Batched encoder: `projected` holds `batch` samples of `tokens` rows each,
/// stacked. `visible` gives each sample's patch locations (all samples must
/// expose the same count); `None` means every sample is full-sequence.
pub fn encode_batch<E: Element>(
    cfg: &ViTConfig,
    store: &ParamStore<E>,
    projected: &Tensor<E>,
    batch: usize,
    visible: Option<&[&[usize]]>,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    cfg.validate()?;
    let n_patches = cfg.n_patches();
    let pos_table = sinusoidal_pos_embed::<E>(n_patches, cfg.width)?;
    let (tokens, pos) = match visible {
        None => {
            let idx: Vec<usize> = (0..batch).flat_map(|_| 0..n_patches).collect();
            (n_patches, pos_table.gather_rows(&idx)?)
        }
        Some(per_sample) => {
            if per_sample.len() != batch {
                return Err(ModelError::Config(format!(
                    "{} visible sets for batch {batch}",
                    per_sample.len()
                )));
            }
            let tokens = per_sample.first().map(|v| v.len()).unwrap_or(0);
            let mut combined = Vec::with_capacity(batch * tokens);
            for idx in per_sample {
                if idx.len() != tokens {
                    return Err(ModelError::Config(
                        "visible sets must have equal sizes within a batch".into(),
                    ));
                }
                validate_visible(idx, n_patches)?;
                combined.extend_from_slice(idx);
            }
            (tokens, pos_table.gather_rows(&combined)?)
        }
    };
    let expect = [batch * tokens, cfg.width];
    if projected.shape() != expect {
        return Err(NumericsError::ShapeMismatch {
            op: "encode",
            lhs: projected.shape().to_vec(),
            rhs: expect.to_vec(),
        }
        .into());
    }
    let mut x = projected.add(&pos)?;
    for b in 0..cfg.depth_blocks {
        x = transformer_block(
            &x,
            store,
            &format!("blocks.{b}"),
            cfg.width,
            cfg.heads,
            batch,
            tokens,
            train,
        )
        .map_err(|e| match e {
            ModelError::Numerics(source) => ModelError::Block { index: b, source },
            other => other,
        })?;
    }
    Ok(x)
}

/// Final encoder layer norm, applied by the MAE and pose pipelines after the
/// block stack.
pub fn encoder_norm<E: Element>(
    x: &Tensor<E>,
    store: &ParamStore<E>,
    train: bool,
) -> Result<Tensor<E>, ModelError> {
    layer_norm(x, store, "encoder_norm", train)
}

#[cfg(test)]
mod tests {
    use super::super::checkpoint::init_vitpose_checkpoint;
    use super::super::HeadConfig;
    use super::*;
    use crate::rng::Rng;

    fn image<E: Element>(seed: u64) -> Tensor<E> {
        let mut rng = Rng::new(seed);
        let data: Vec<E> = (0..224 * 224 * 3)
            .map(|_| E::from_f64(rng.uniform()))
            .collect();
        Tensor::constant(data, &[224, 224, 3]).unwrap()
    }

    #[test]
    fn patch_count_and_dim_for_base() {
        let cfg = ViTConfig::base();
        assert_eq!(cfg.n_patches(), 196);
        assert_eq!(cfg.patch_dim(), 768);
        let patches = patchify(&image::<f32>(1), &cfg).unwrap();
        assert_eq!(patches.shape(), &[196, 768]);
    }

    #[test]
    fn unpatchify_inverts_patchify_exactly() {
        let cfg = ViTConfig::tiny();
        let img = image::<f32>(2);
        let back = unpatchify(&patchify(&img, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn pos_embed_rows_distinct_and_bounded() {
        let t: Tensor<f64> = sinusoidal_pos_embed(10_000, 64).unwrap();
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let mut seen = std::collections::HashSet::new();
        for row in t.data().chunks_exact(64) {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key), "duplicate position row");
        }
        let grid: Tensor<f64> = sinusoidal_pos_embed(196, 64).unwrap();
        let mut seen = std::collections::HashSet::new();
        for row in grid.data().chunks_exact(64) {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key));
        }
    }

    #[test]
    fn pos_embed_deterministic_and_dim_checked() {
        let a: Tensor<f64> = sinusoidal_pos_embed(196, 64).unwrap();
        let b: Tensor<f64> = sinusoidal_pos_embed(196, 64).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(sinusoidal_pos_embed::<f64>(10, 7).is_err());
    }

    #[test]
    fn zero_blocks_encode_is_projection_plus_positions() {
        let mut cfg = ViTConfig::tiny();
        cfg.depth_blocks = 0;
        let ckpt = init_vitpose_checkpoint(cfg, HeadConfig::tiny(), 3).unwrap();
        let store = &ckpt.params;
        let patches = patchify(&image::<f32>(5), &cfg).unwrap();
        let projected = project_patches(&cfg, store, &patches, false).unwrap();
        let out = encode(&cfg, store, &projected, None, false).unwrap();
        let pos: Tensor<f32> = sinusoidal_pos_embed(196, cfg.width).unwrap();
        let expect = projected.add(&pos).unwrap();
        assert_eq!(out.data(), expect.data());
    }

    #[test]
    fn visible_subset_matches_full_rows_at_zero_depth() {
        let mut cfg = ViTConfig::tiny();
        cfg.depth_blocks = 0;
        let ckpt = init_vitpose_checkpoint(cfg, HeadConfig::tiny(), 4).unwrap();
        let patches = patchify(&image::<f32>(6), &cfg).unwrap();
        let visible = [3usize, 50, 120, 195];
        let vis_patches = patches.gather_rows(&visible).unwrap();
        let proj_vis = project_patches(&cfg, &ckpt.params, &vis_patches, false).unwrap();
        let out_vis = encode(&cfg, &ckpt.params, &proj_vis, Some(&visible), false).unwrap();

        let proj_all = project_patches(&cfg, &ckpt.params, &patches, false).unwrap();
        let out_all = encode(&cfg, &ckpt.params, &proj_all, None, false).unwrap();
        for (k, &i) in visible.iter().enumerate() {
            let w = cfg.width;
            assert_eq!(out_vis.data()[k * w..(k + 1) * w], out_all.data()[i * w..(i + 1) * w]);
        }
    }

    #[test]
    fn permuting_visible_patches_permutes_outputs() {
        let cfg = ViTConfig::tiny();
        let ckpt = init_vitpose_checkpoint(cfg, HeadConfig::tiny(), 9).unwrap();
        let patches = patchify(&image::<f32>(7), &cfg).unwrap();
        let idx_a = [4usize, 17, 60, 99, 140];
        let idx_b = [140usize, 17, 99, 60, 4]; // positions 0<->4, 2<->3 swapped
        let run = |idx: &[usize]| {
            let p = patches.gather_rows(idx).unwrap();
            let proj = project_patches(&cfg, &ckpt.params, &p, false).unwrap();
            encode(&cfg, &ckpt.params, &proj, Some(idx), false).unwrap()
        };
        let out_a = run(&idx_a);
        let out_b = run(&idx_b);
        let w = cfg.width;
        let perm = [4usize, 1, 3, 2, 0];
        for (row_b, &row_a) in perm.iter().enumerate() {
            let a = &out_a.data()[row_a * w..(row_a + 1) * w];
            let b = &out_b.data()[row_b * w..(row_b + 1) * w];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-5, "row {row_b} differs");
            }
        }
    }

    #[test]
    fn encode_output_shape_contract() {
        let cfg = ViTConfig::tiny();
        let ckpt = init_vitpose_checkpoint(cfg, HeadConfig::tiny(), 11).unwrap();
        let patches = patchify(&image::<f32>(8), &cfg).unwrap();
        let proj = project_patches(&cfg, &ckpt.params, &patches, false).unwrap();
        let full = encode(&cfg, &ckpt.params, &proj, None, false).unwrap();
        assert_eq!(full.shape(), &[196, 64]);

        let visible: Vec<usize> = (0..49).map(|i| i * 4).collect();
        let vis = patches.gather_rows(&visible).unwrap();
        let proj_vis = project_patches(&cfg, &ckpt.params, &vis, false).unwrap();
        let out = encode(&cfg, &ckpt.params, &proj_vis, Some(&visible), false).unwrap();
        assert_eq!(out.shape(), &[49, 64]);
    }
}
