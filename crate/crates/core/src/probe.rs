//! Top-k attention erasure probe: erase the patches each image's class
//! token attends to most and measure how confidence and accuracy respond.

use std::path::Path;

use crate::augment::fill_patches;
use crate::data::{Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::harness::{score_logits, EVAL_BATCH};
use crate::model::{infer, patch_scores, top_k_patches, ModelParams};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRow {
    pub k: usize,
    /// Mean max softmax probability after erasure.
    pub p_k: f64,
    pub top1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeResult {
    pub rows: Vec<ProbeRow>,
}

impl ProbeResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,p_k,top1\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6}\n", r.k, r.p_k, r.top1));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn check_ks(ks: &[usize], n_patches: usize) -> Result<()> {
    if ks.first() != Some(&0) {
        return Err(Error::invalid("probe ks must start at 0"));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("probe ks must be strictly increasing, got {ks:?}")));
    }
    let last = *ks.last().expect("non-empty");
    if last > n_patches {
        return Err(Error::invalid(format!("k = {last} exceeds the {n_patches} patches per image")));
    }
    Ok(())
}

/// Runs the probe over every sample of `ds`. `fill` is in normalized units,
/// so 0 is the channel mean. The k = 0 row is computed exactly as
/// [`crate::harness::evaluate`] does.
pub fn probe_topk<T: Element>(
    params: &ModelParams<T>,
    ds: &Dataset,
    norm: &Normalizer,
    ks: &[usize],
    fill: f64,
) -> Result<ProbeResult> {
    let cfg = params.config();
    check_ks(ks, cfg.n_patches())?;
    if ds.n == 0 {
        return Err(Error::invalid("probe dataset is empty"));
    }
    let k_max = *ks.last().expect("checked");
    let fill = T::of(fill);
    let mut correct = vec![0usize; ks.len()];
    let mut mass = vec![0.0f64; ks.len()];
    let all: Vec<usize> = (0..ds.n).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let images = ds.images::<T>(chunk, norm)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.label(i)).collect();
        let base = infer(params, &images)?;
        let (c, m) = score_logits(&base.logits, &labels)?;
        correct[0] += c;
        mass[0] += m;
        if ks.len() == 1 {
            continue;
        }
        let ranked = base
            .attention
            .iter()
            .map(|a| Ok(top_k_patches(&patch_scores(a)?, k_max)))
            .collect::<Result<Vec<_>>>()?;
        let per = images.len() / chunk.len();
        let shape = images.shape()[1..].to_vec();
        for (slot, &k) in ks.iter().enumerate().skip(1) {
            let mut data = Vec::with_capacity(images.len());
            for (img, order) in images.data().chunks_exact(per).zip(&ranked) {
                let x = Tensor::new(shape.clone(), img.to_vec())?;
                data.extend_from_slice(fill_patches(&x, &order[..k], cfg.patch_size, fill)?.data());
            }
            let erased = Tensor::new(images.shape().to_vec(), data)?;
            let (c, m) = score_logits(&infer(params, &erased)?.logits, &labels)?;
            correct[slot] += c;
            mass[slot] += m;
        }
    }
    let n = ds.n as f64;
    let rows = ks
        .iter()
        .zip(correct.iter().zip(&mass))
        .map(|(&k, (&c, &m))| ProbeRow { k, p_k: m / n, top1: c as f64 / n })
        .collect();
    Ok(ProbeResult { rows })
}
