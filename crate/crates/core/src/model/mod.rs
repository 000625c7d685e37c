//! Model definitions: ViT encoder, masked-autoencoder forward pass, and the
//! deconvolution pose head, plus the named-parameter store and checkpoint
//! container they live in.

mod checkpoint;
mod head;
mod mae;
mod vit;

pub use checkpoint::{
    copy_params_filtered, init_encoder_from, init_mae_checkpoint, init_vitpose_checkpoint,
    load_checkpoint, save_checkpoint,
};
pub use head::{vitpose_forward, vitpose_forward_batch};
pub use mae::{mae_forward, mae_forward_batch, mae_loss, mae_loss_batch, mae_mask};
pub use vit::{
    encode, encode_batch, encoder_norm, patchify, project_patches, sinusoidal_pos_embed,
    unpatchify,
};

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numerics::{Element, NumericsError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("transformer block {index}: {source}")]
    Block {
        index: usize,
        source: NumericsError,
    },
    #[error("parameter {name}: shape {found:?} does not match {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Vision-transformer encoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub width: usize,
    pub depth_blocks: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl ViTConfig {
    pub fn base() -> Self {
        ViTConfig { image_size: 224, patch_size: 16, width: 768, depth_blocks: 12, heads: 12, mlp_ratio: 4.0 }
    }

    /// Desk-scale preset used by the fast experiments and checks.
    pub fn tiny() -> Self {
        ViTConfig { image_size: 224, patch_size: 16, width: 64, depth_blocks: 4, heads: 4, mlp_ratio: 4.0 }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_size % self.patch_size != 0 {
            return Err(ModelError::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.width % self.heads != 0 || self.width == 0 || self.heads == 0 {
            return Err(ModelError::Config(format!(
                "width {} must divide into {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

/// Masked-autoencoder settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeConfig {
    pub mask_ratio: f64,
    pub decoder_width: usize,
    pub decoder_blocks: usize,
}

impl MaeConfig {
    pub fn base() -> Self {
        MaeConfig { mask_ratio: 0.75, decoder_width: 512, decoder_blocks: 2 }
    }

    pub fn tiny() -> Self {
        MaeConfig { mask_ratio: 0.75, decoder_width: 64, decoder_blocks: 2 }
    }
}

/// Deconvolution head settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub channels: usize,
}

impl HeadConfig {
    pub fn base() -> Self {
        HeadConfig { channels: 256 }
    }

    pub fn tiny() -> Self {
        HeadConfig { channels: 32 }
    }
}

/// One pretraining or fine-tuning stage in a checkpoint's provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub dataset: String,
    pub epochs: usize,
    pub seed: u64,
}

/// Ordered named-parameter container.
///
/// Values are `Arc`-shared so worker threads can wrap them as graph leaves
/// without copying; the optimizer mutates them between steps via
/// [`ParamStore::value_mut`].
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Element> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Arc<Vec<E>>>,
    index: HashMap<String, usize>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), shapes: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<E>) -> usize {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter {name} shape/data mismatch"
        );
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.names.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.values.push(Arc::new(data));
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn shape(&self, id: usize) -> &[usize] {
        &self.shapes[id]
    }

    pub fn value(&self, id: usize) -> &Arc<Vec<E>> {
        &self.values[id]
    }

    /// Mutable access for optimizer updates. Clones only if a forward graph
    /// from a previous step still holds the buffer.
    pub fn value_mut(&mut self, id: usize) -> &mut Vec<E> {
        Arc::make_mut(&mut self.values[id])
    }

    /// Mutable view of every parameter buffer, in id order, for an
    /// optimizer step over the whole store.
    pub fn all_values_mut(&mut self) -> Vec<&mut [E]> {
        self.values
            .iter_mut()
            .map(|v| Arc::make_mut(v).as_mut_slice())
            .collect()
    }

    pub fn set_value(&mut self, id: usize, data: Arc<Vec<E>>) {
        assert_eq!(data.len(), self.values[id].len(), "parameter {} resize", self.names[id]);
        self.values[id] = data;
    }

    /// Wrap a parameter as a graph leaf. With `train` set the leaf exports
    /// gradients under its parameter id.
    pub fn leaf(&self, name: &str, train: bool) -> Result<Tensor<E>, ModelError> {
        let id = self
            .id_of(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        Ok(Tensor::leaf_shared(
            Arc::clone(&self.values[id]),
            &self.shapes[id],
            train,
            train.then_some(id),
        )?)
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.values.iter().map(|v| v.len()).collect()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn convert<T: Element>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for id in 0..self.len() {
            let data = self.values[id].iter().map(|v| T::from_f64(v.to_f64())).collect();
            out.insert(&self.names[id], self.shapes[id].clone(), data);
        }
        out
    }
}

/// Named parameters plus the architecture configs and training provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub vit: ViTConfig,
    pub mae: Option<MaeConfig>,
    pub head: Option<HeadConfig>,
    pub lineage: Vec<StageRecord>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn push_stage(&mut self, stage: StageRecord) {
        self.lineage.push(stage);
    }
}

/// Parameter names that belong to the shared ViT encoder.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("patch_embed.") || name.starts_with("blocks.") || name.starts_with("encoder_norm.")
}
