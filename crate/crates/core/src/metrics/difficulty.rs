use serde::{Deserialize, Serialize};

use super::MetricsConfig;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Per-sample class probabilities, one row per sample, with the logits they
/// came from when known.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbBatch {
    classes: usize,
    probs: Vec<f64>,
    logits: Option<Vec<f64>>,
}

impl ProbBatch {
    pub fn from_probs(classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes == 0 || probs.is_empty() || !probs.len().is_multiple_of(classes) {
            return Err(Error::invalid(format!(
                "{} probabilities do not form rows of {classes} classes",
                probs.len()
            )));
        }
        Ok(ProbBatch { classes, probs, logits: None })
    }

    /// Softmax of `[N, C]` logits, computed in `f64`.
    pub fn from_logits<T: Element>(logits: &Tensor<T>) -> Result<Self> {
        let [_, classes] = *logits.shape() else {
            return Err(Error::shape("prob_batch", format!("logits must be [N, C], got {:?}", logits.shape())));
        };
        let z = logits.to_f64_vec();
        let probs = Tensor::<f64>::new(logits.shape().to_vec(), z.clone())?.softmax()?.into_data();
        Ok(ProbBatch { classes, probs, logits: Some(z) })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.classes)
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    /// Maximum class probability of every row.
    pub fn max_probs(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyPartition {
    pub easy: usize,
    pub moderate: usize,
    pub hard: usize,
}

impl DifficultyPartition {
    pub fn total(&self) -> usize {
        self.easy + self.moderate + self.hard
    }
}

/// Splits a batch by each row's maximum probability `p`:
/// easy when `p > alpha`, hard when `p < beta`, moderate otherwise.
pub fn partition_batch(probs: &ProbBatch, cfg: &MetricsConfig) -> Result<DifficultyPartition> {
    let mut part = DifficultyPartition::default();
    for (i, row) in probs.rows().enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-4 || row.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("row {i} sums to {total}, not a probability vector")));
        }
        let pk = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if pk > cfg.alpha {
            part.easy += 1;
        } else if pk < cfg.beta {
            part.hard += 1;
        } else {
            part.moderate += 1;
        }
    }
    Ok(part)
}

/// Easy and hard proportions of a partition.
pub fn ddp(part: &DifficultyPartition) -> Result<(f64, f64)> {
    let n = part.total();
    if n == 0 {
        return Err(Error::invalid("cannot take proportions of an empty partition"));
    }
    Ok((part.easy as f64 / n as f64, part.hard as f64 / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpRecord {
    pub t: f64,
    pub ddp_e: f64,
    pub ddp_h: f64,
}
