//! Parameter initialization, checkpoint persistence, and encoder transfer.
//!
//! Checkpoint directory layout: `config.json` (configs + lineage) and one
//! STEN file per named parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mae::decoder_heads;
use super::{
    is_encoder_param, Checkpoint, HeadConfig, MaeConfig, ModelError, ParamStore, StageRecord,
    ViTConfig,
};
use crate::data::JOINT_COUNT;
use crate::numerics::{read_sten, write_sten_f32};
use crate::rng::{derive_seed, Rng};

const INIT_STD: f64 = 0.02;

struct Init {
    rng: Rng,
}

impl Init {
    fn new(seed: u64) -> Self {
        Init { rng: Rng::new(derive_seed(&[seed, 0x696e_6974])) }
    }

    fn trunc_normal(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.rng.trunc_normal(INIT_STD) as f32).collect()
    }

    /// Weights get truncated normal, biases zeros, norm gains ones.
    fn linear(&mut self, store: &mut ParamStore<f32>, name: &str, d_in: usize, d_out: usize) {
        store.insert(&format!("{name}.weight"), vec![d_in, d_out], self.trunc_normal(d_in * d_out));
        store.insert(&format!("{name}.bias"), vec![d_out], vec![0.0; d_out]);
    }

    fn layer_norm(&mut self, store: &mut ParamStore<f32>, name: &str, dim: usize) {
        store.insert(&format!("{name}.gamma"), vec![dim], vec![1.0; dim]);
        store.insert(&format!("{name}.beta"), vec![dim], vec![0.0; dim]);
    }

    fn block(&mut self, store: &mut ParamStore<f32>, prefix: &str, width: usize, mlp_ratio: f64) {
        let hidden = (width as f64 * mlp_ratio) as usize;
        self.layer_norm(store, &format!("{prefix}.ln1"), width);
        self.linear(store, &format!("{prefix}.attn.qkv"), width, 3 * width);
        self.linear(store, &format!("{prefix}.attn.proj"), width, width);
        self.layer_norm(store, &format!("{prefix}.ln2"), width);
        self.linear(store, &format!("{prefix}.mlp.fc1"), width, hidden);
        self.linear(store, &format!("{prefix}.mlp.fc2"), hidden, width);
    }

    fn encoder(&mut self, store: &mut ParamStore<f32>, cfg: &ViTConfig) {
        self.linear(store, "patch_embed", cfg.patch_dim(), cfg.width);
        for b in 0..cfg.depth_blocks {
            self.block(store, &format!("blocks.{b}"), cfg.width, cfg.mlp_ratio);
        }
        self.layer_norm(store, "encoder_norm", cfg.width);
    }
}

/// Fresh MAE checkpoint: encoder plus decoder, randomly initialized.
pub fn init_mae_checkpoint(vit: ViTConfig, mae: MaeConfig, seed: u64) -> Result<Checkpoint, ModelError> {
    vit.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    init.encoder(&mut store, &vit);
    let dw = mae.decoder_width;
    if dw % decoder_heads(dw) != 0 {
        return Err(ModelError::Config(format!("decoder width {dw} has no valid head split")));
    }
    init.linear(&mut store, "decoder.embed", vit.width, dw);
    store.insert("decoder.mask_token", vec![dw], init.trunc_normal(dw));
    for b in 0..mae.decoder_blocks {
        init.block(&mut store, &format!("decoder.blocks.{b}"), dw, vit.mlp_ratio);
    }
    init.layer_norm(&mut store, "decoder_norm", dw);
    init.linear(&mut store, "decoder.pred", dw, vit.patch_dim());
    Ok(Checkpoint { vit, mae: Some(mae), head: None, lineage: Vec::new(), params: store })
}

/// Fresh pose checkpoint: encoder plus deconvolution head. The final
/// projection starts at zero so the initial heatmaps are flat.
pub fn init_vitpose_checkpoint(vit: ViTConfig, head: HeadConfig, seed: u64) -> Result<Checkpoint, ModelError> {
    vit.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    init.encoder(&mut store, &vit);
    let c = head.channels;
    store.insert("head.deconv1.weight", vec![vit.width, c, 4, 4], init.trunc_normal(vit.width * c * 16));
    store.insert("head.deconv1.bias", vec![c], vec![0.0; c]);
    init.layer_norm(&mut store, "head.norm1", c);
    store.insert("head.deconv2.weight", vec![c, c, 4, 4], init.trunc_normal(c * c * 16));
    store.insert("head.deconv2.bias", vec![c], vec![0.0; c]);
    init.layer_norm(&mut store, "head.norm2", c);
    store.insert("head.final.weight", vec![c, JOINT_COUNT], vec![0.0; c * JOINT_COUNT]);
    store.insert("head.final.bias", vec![JOINT_COUNT], vec![0.0; JOINT_COUNT]);
    Ok(Checkpoint { vit, head: Some(head), mae: None, lineage: Vec::new(), params: store })
}

/// Copy every parameter whose name passes `filter` from `source` into
/// `target`, requiring exact shape matches.
pub fn copy_params_filtered(
    source: &Checkpoint,
    target: &mut Checkpoint,
    filter: impl Fn(&str) -> bool,
) -> Result<usize, ModelError> {
    let mut copied = 0usize;
    for id in 0..target.params.len() {
        let name = target.params.name(id).to_string();
        if !filter(&name) {
            continue;
        }
        let Some(src_id) = source.params.id_of(&name) else {
            continue;
        };
        if source.params.shape(src_id) != target.params.shape(id) {
            return Err(ModelError::ParamShape {
                name,
                expected: target.params.shape(id).to_vec(),
                found: source.params.shape(src_id).to_vec(),
            });
        }
        let data = std::sync::Arc::clone(source.params.value(src_id));
        target.params.set_value(id, data);
        copied += 1;
    }
    Ok(copied)
}

/// Initialize a model's ViT encoder from a pretrained checkpoint.
///
/// Encoder weights are copied (exact shape match required, first mismatch
/// is named); everything else in the target keeps its fresh initialization.
/// The target's provenance becomes the source lineage plus `stage`.
pub fn init_encoder_from(
    source: &Checkpoint,
    mut target: Checkpoint,
    stage: StageRecord,
) -> Result<Checkpoint, ModelError> {
    for name in source.params.names() {
        if is_encoder_param(name) && target.params.id_of(name).is_none() {
            return Err(ModelError::MissingParam(format!("{name} absent from target")));
        }
    }
    copy_params_filtered(source, &mut target, is_encoder_param)?;
    let mut lineage = source.lineage.clone();
    lineage.push(stage);
    target.lineage = lineage;
    Ok(target)
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    vit: ViTConfig,
    mae: Option<MaeConfig>,
    head: Option<HeadConfig>,
    lineage: Vec<StageRecord>,
    params: Vec<String>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir).map_err(|e| ModelError::Checkpoint {
        path: dir.display().to_string(),
        msg: e.to_string(),
    })?;
    let names: Vec<String> = ckpt.params.names().map(str::to_string).collect();
    for (id, name) in names.iter().enumerate() {
        write_sten_f32(
            &dir.join(format!("{name}.sten")),
            ckpt.params.shape(id),
            ckpt.params.value(id),
        )?;
    }
    let config = ConfigFile {
        vit: ckpt.vit,
        mae: ckpt.mae,
        head: ckpt.head,
        lineage: ckpt.lineage.clone(),
        params: names,
    };
    let path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&config).map_err(|e| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    std::fs::write(&path, json).map_err(|e| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, ModelError> {
    let path = dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let config: ConfigFile = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut store = ParamStore::new();
    for name in &config.params {
        let file = dir.join(format!("{name}.sten"));
        let (shape, payload) = read_sten(&file)?;
        store.insert(name, shape, payload.into_f32());
    }
    Ok(Checkpoint {
        vit: config.vit,
        mae: config.mae,
        head: config.head,
        lineage: config.lineage,
        params: store,
    })
}
