use std::collections::BTreeMap;

use super::config::OptimConfig;
use crate::error::Result;
use crate::model::ModelParams;
use crate::tensor::{Element, Tensor};

/// Learning rate after `step` updates: linear warmup, then cosine decay to
/// `min_lr` at `total` steps.
pub fn lr_at(cfg: &OptimConfig, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return cfg.lr * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let s = ((step - warmup) as f64 / span).min(1.0);
    cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * s).cos())
}

/// Weight decay applies to matrices only; biases, norms and embeddings
/// that are added rather than multiplied are left alone.
fn decays(name: &str, t: &Tensor<impl Element>) -> bool {
    t.shape().len() >= 2 && name.ends_with(".weight")
}

/// Adam with decoupled weight decay. Moments are kept in `f64`.
pub struct AdamW {
    cfg: OptimConfig,
    step: usize,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: OptimConfig) -> Self {
        AdamW { cfg, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Applies one update at learning rate `lr`. Parameters without a
    /// gradient are left unchanged.
    pub fn step<T: Element>(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut updated = Vec::new();
        for (name, p) in params.iter() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            let wd = if decays(name, p) { c.weight_decay } else { 0.0 };
            let data = p
                .data()
                .iter()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|((&w, &g), (m, v))| {
                    let (w, g) = (w.f64(), g.f64());
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    T::of(w - lr * (update + wd * w))
                })
                .collect();
            updated.push((name.clone(), Tensor::new(p.shape().to_vec(), data)?));
        }
        for (name, t) in updated {
            params.replace(&name, t);
        }
        Ok(())
    }
}
