//! A small global-attention vision transformer.
//!
//! Patch embedding, a learned class token and positional embeddings,
//! pre-norm transformer blocks with GELU MLPs, and a linear head on the
//! class token. The last block's attention map is exposed for probing.

mod checkpoint;
mod vit;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

pub use checkpoint::{
    checkpoint_precision, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use vit::{
    infer, patch_scores, patchify, soft_cross_entropy, top_k_patches, vit_forward, AttentionScores, Inference,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig { image_size: 32, patch_size: 4, channels: 3, dim: 64, depth: 4, heads: 4, mlp_ratio: 2, n_classes: 8 }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.image_size,
            self.patch_size,
            self.channels,
            self.dim,
            self.depth,
            self.heads,
            self.mlp_ratio,
            self.n_classes,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid(format!("model extents must be positive: {self:?}")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!("dim {} is not divisible by heads {}", self.dim, self.heads)));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// Every parameter path with its shape, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let hidden = d * self.mlp_ratio;
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![self.patch_dim(), d]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("cls_token".to_string(), vec![1, d]),
            ("pos_embed".to_string(), vec![self.tokens(), d]),
        ];
        for b in 0..self.depth {
            let p = |s: &str| format!("blocks.{b}.{s}");
            out.extend([
                (p("norm1.weight"), vec![d]),
                (p("norm1.bias"), vec![d]),
                (p("attn.qkv.weight"), vec![d, 3 * d]),
                (p("attn.qkv.bias"), vec![3 * d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("norm2.weight"), vec![d]),
                (p("norm2.bias"), vec![d]),
                (p("mlp.fc1.weight"), vec![d, hidden]),
                (p("mlp.fc1.bias"), vec![hidden]),
                (p("mlp.fc2.weight"), vec![hidden, d]),
                (p("mlp.fc2.bias"), vec![d]),
            ]);
        }
        out.extend([
            ("norm.weight".to_string(), vec![d]),
            ("norm.bias".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, self.n_classes]),
            ("head.bias".to_string(), vec![self.n_classes]),
        ]);
        out
    }
}

/// All weights of a model, keyed by layer path.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: VitConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

const INIT_STD: f64 = 0.02;

fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * INIT_STD {
                break v;
            }
        })
        .collect()
}

impl<T: Element> ModelParams<T> {
    /// Truncated-normal weights, zero biases, unit layer-norm gains.
    pub fn init<R: Rng + ?Sized>(config: &VitConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let values = if name.ends_with("norm1.weight") || name.ends_with("norm2.weight") || name == "norm.weight"
            {
                vec![1.0; n]
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                trunc_normal(rng, n)
            };
            tensors.insert(name, Tensor::from_f64(shape, &values)?);
        }
        Ok(ModelParams { config: config.clone(), tensors })
    }

    pub fn from_tensors(config: VitConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != tensors.len() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", expected.len(), tensors.len())));
        }
        for (name, shape) in &expected {
            let t = tensors.get(name).ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("model", format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite { op: "model parameters" });
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub(crate) fn replace(&mut self, name: &str, t: Tensor<T>) {
        if let Some(slot) = self.tensors.get_mut(name) {
            *slot = t;
        }
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BTreeMap<String, Var> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                let t = if trainable { t.clone().with_grad() } else { t.clone() };
                (k.clone(), g.input(t))
            })
            .collect()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
        }
    }
}
