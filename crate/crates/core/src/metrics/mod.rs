//! Difficulty partitions, dynamic data proportions, fitted curves, the
//! knowledge assimilation rate and three-period stage segmentation.
//!
//! Everything here runs in `f64`.

mod difficulty;
mod polyfit;
mod stages;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use difficulty::{ddp, partition_batch, DdpRecord, DifficultyPartition, ProbBatch};
pub use polyfit::{lsq_polyfit, FittedCurve};
pub use stages::{detect_stages, kar_series, KarSample, Stage, StageBoundaries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Easy threshold: a sample is easy when its max probability exceeds this.
    pub alpha: f64,
    /// Hard threshold: a sample is hard when its max probability is below this.
    pub beta: f64,
    pub fit_degree: usize,
    pub fallback_t1: f64,
    pub fallback_t2: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { alpha: 0.8, beta: 0.3, fit_degree: 5, fallback_t1: 0.15, fallback_t2: 0.35 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("metrics alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::invalid(format!("metrics beta must be in [0, 1), got {}", self.beta)));
        }
        if self.beta >= self.alpha {
            return Err(Error::invalid(format!("beta ({}) must be below alpha ({})", self.beta, self.alpha)));
        }
        if self.fit_degree < 2 {
            return Err(Error::invalid(format!("fit_degree must be at least 2, got {}", self.fit_degree)));
        }
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if !ok(self.fallback_t1) || !ok(self.fallback_t2) || self.fallback_t1 >= self.fallback_t2 {
            return Err(Error::invalid(format!(
                "fallback fractions must satisfy 0 < t1 < t2 < 1, got ({}, {})",
                self.fallback_t1, self.fallback_t2
            )));
        }
        Ok(())
    }
}
