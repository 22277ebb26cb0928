use std::collections::BTreeMap;

use super::{ModelParams, VitConfig};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// `[N, C, H, W]` images to `[N, patches, C * p * p]` rows; patches are in
/// row-major grid order, features in (channel, row, col) order.
pub fn patchify<T: Element>(images: &Tensor<T>, patch_size: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = *images.shape() else {
        return Err(Error::shape("patchify", format!("expected [N, C, H, W], got {:?}", images.shape())));
    };
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::shape("patchify", format!("{h}x{w} not divisible by patch {patch_size}")));
    }
    let (gh, gw, p) = (h / patch_size, w / patch_size, patch_size);
    images
        .reshape([n, c, gh, p, gw, p])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape([n, gh * gw, c * p * p])
}

fn param(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name).copied().ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
}

fn linear<T: Element>(g: &mut Graph<T>, vars: &BTreeMap<String, Var>, x: Var, prefix: &str) -> Result<Var> {
    let w = param(vars, &format!("{prefix}.weight"))?;
    let b = param(vars, &format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn norm<T: Element>(g: &mut Graph<T>, vars: &BTreeMap<String, Var>, x: Var, prefix: &str) -> Result<Var> {
    let w = param(vars, &format!("{prefix}.weight"))?;
    let b = param(vars, &format!("{prefix}.bias"))?;
    g.layer_norm(x, w, b)
}

/// Records a forward pass on `g`. Returns `[N, C]` logits and the last
/// block's attention probabilities, shaped `[N * heads, tokens, tokens]`.
pub fn vit_forward<T: Element>(
    cfg: &VitConfig,
    g: &mut Graph<T>,
    vars: &BTreeMap<String, Var>,
    images: Var,
) -> Result<(Var, Var)> {
    let shape = g.value(images)?.shape().to_vec();
    let expected = [cfg.channels, cfg.image_size, cfg.image_size];
    if shape.len() != 4 || shape[1..] != expected {
        return Err(Error::shape("vit_forward", format!("batch {shape:?} does not match [N, {expected:?}]")));
    }
    let n = shape[0];
    let (p, grid) = (cfg.patch_size, cfg.grid());
    let (d, heads) = (cfg.dim, cfg.heads);
    let dh = d / heads;
    let tokens = cfg.tokens();

    let x = g.reshape(images, &[n, cfg.channels, grid, p, grid, p])?;
    let x = g.permute(x, &[0, 2, 4, 1, 3, 5])?;
    let x = g.reshape(x, &[n, cfg.n_patches(), cfg.patch_dim()])?;
    let x = linear(g, vars, x, "patch_embed")?;
    let cls = g.expand(param(vars, "cls_token")?, &[n])?;
    let x = g.concat(&[cls, x], 1)?;
    let mut h = g.add(x, param(vars, "pos_embed")?)?;

    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut attn = None;
    for b in 0..cfg.depth {
        let pre = format!("blocks.{b}");
        let a = norm(g, vars, h, &format!("{pre}.norm1"))?;
        let qkv = linear(g, vars, a, &format!("{pre}.attn.qkv"))?;
        let qkv = g.reshape(qkv, &[n, tokens, 3, heads, dh])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
        let part = |i: usize, g: &mut Graph<T>| -> Result<Var> {
            let s = g.slice(qkv, 0, i, 1)?;
            g.reshape(s, &[n * heads, tokens, dh])
        };
        let q = part(0, g)?;
        let q = g.scale(q, scale)?;
        let k = part(1, g)?;
        let v = part(2, g)?;
        let kt = g.transpose(k, 1, 2)?;
        let scores = g.matmul(q, kt)?;
        let probs = g.softmax(scores)?;
        attn = Some(probs);
        let o = g.matmul(probs, v)?;
        let o = g.reshape(o, &[n, heads, tokens, dh])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[n, tokens, d])?;
        let o = linear(g, vars, o, &format!("{pre}.attn.proj"))?;
        h = g.add(h, o)?;

        let m = norm(g, vars, h, &format!("{pre}.norm2"))?;
        let m = linear(g, vars, m, &format!("{pre}.mlp.fc1"))?;
        let m = g.gelu(m)?;
        let m = linear(g, vars, m, &format!("{pre}.mlp.fc2"))?;
        h = g.add(h, m)?;
    }
    let h = norm(g, vars, h, "norm")?;
    let cls = g.slice(h, 1, 0, 1)?;
    let cls = g.reshape(cls, &[n, d])?;
    let logits = linear(g, vars, cls, "head")?;
    let attn = attn.ok_or_else(|| Error::invalid("model has no transformer blocks"))?;
    Ok((logits, attn))
}

/// Mean of `-sum_c y_c log softmax(z)_c` over the batch.
pub fn soft_cross_entropy<T: Element>(g: &mut Graph<T>, logits: Var, targets: &Tensor<T>) -> Result<Var> {
    let z = g.value(logits)?;
    if z.shape() != targets.shape() || z.shape().len() != 2 {
        return Err(Error::shape("soft_cross_entropy", format!("logits {:?}, targets {:?}", z.shape(), targets.shape())));
    }
    let (n, c) = (z.shape()[0], z.shape()[1]);
    for (i, row) in targets.data().chunks(c).enumerate() {
        let mass: f64 = row.iter().map(|v| v.f64()).sum();
        if row.iter().any(|v| v.f64() < 0.0) || mass > 1.0 + 1e-6 || !mass.is_finite() {
            return Err(Error::invalid(format!("target row {i} has mass {mass}, expected within [0, 1]")));
        }
    }
    let y = g.constant(targets.clone());
    let logp = g.log_softmax(logits)?;
    let prod = g.mul(logp, y)?;
    let total = g.sum(prod)?;
    g.scale(total, T::of(-1.0 / n as f64))
}

/// Last-layer attention map of one sample, `[heads, tokens, tokens]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionScores {
    pub heads: usize,
    pub tokens: usize,
    pub data: Vec<f64>,
}

impl AttentionScores {
    pub fn at(&self, head: usize, query: usize, key: usize) -> f64 {
        self.data[(head * self.tokens + query) * self.tokens + key]
    }
}

/// Class-token attention to each patch, averaged over heads. Token 0 is the
/// class token, so patch `p` is token `p + 1`.
pub fn patch_scores(attn: &AttentionScores) -> Result<Vec<f64>> {
    let (h, t) = (attn.heads, attn.tokens);
    if h == 0 || t < 2 || attn.data.len() != h * t * t {
        return Err(Error::invalid(format!(
            "attention map of {} values is not [{h}, {t}, {t}]",
            attn.data.len()
        )));
    }
    for head in 0..h {
        let row = &attn.data[head * t * t..head * t * t + t];
        let mass: f64 = row.iter().sum();
        if row.iter().any(|&v| !(v >= 0.0)) || (mass - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!("class-token attention row of head {head} sums to {mass}")));
        }
    }
    Ok((1..t).map(|key| (0..h).map(|head| attn.at(head, 0, key)).sum::<f64>() / h as f64).collect())
}

/// Indices of the `k` highest scores, best first; ties go to the lower index.
pub fn top_k_patches(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order
}

/// Outputs of an untaped forward pass.
#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub logits: Tensor<T>,
    pub attention: Vec<AttentionScores>,
}

/// Forward pass with frozen parameters.
pub fn infer<T: Element>(params: &ModelParams<T>, images: &Tensor<T>) -> Result<Inference<T>> {
    let cfg = params.config();
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let x = g.constant(images.clone());
    let (logits, attn) = vit_forward(cfg, &mut g, &vars, x)?;
    let attn = g.value(attn)?;
    let (heads, tokens) = (cfg.heads, cfg.tokens());
    let per = heads * tokens * tokens;
    let attention = attn
        .data()
        .chunks_exact(per)
        .map(|c| AttentionScores { heads, tokens, data: c.iter().map(|v| v.f64()).collect() })
        .collect();
    Ok(Inference { logits: g.value(logits)?.clone(), attention })
}
