use serde::{Deserialize, Serialize};

use super::{lsq_polyfit, DdpRecord, MetricsConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KarSample {
    pub t: f64,
    pub kar: f64,
}

/// Learning period of an epoch: formation, growth or exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    T1,
    T2,
    T3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageBoundaries {
    pub t1_end: usize,
    pub t2_end: usize,
    pub total: usize,
    #[serde(default)]
    pub fallback_used: bool,
}

impl StageBoundaries {
    pub fn new(t1_end: usize, t2_end: usize, total: usize) -> Result<Self> {
        if !(0 < t1_end && t1_end < t2_end && t2_end < total) {
            return Err(Error::invalid(format!(
                "stage boundaries must satisfy 0 < t1 < t2 < total, got ({t1_end}, {t2_end}, {total})"
            )));
        }
        Ok(StageBoundaries { t1_end, t2_end, total, fallback_used: false })
    }

    /// Boundaries at fixed fractions of the schedule, rounded half-up.
    /// Short schedules may produce empty periods.
    pub fn from_fractions(total: usize, f1: f64, f2: f64) -> Self {
        let at = |f: f64| ((f * total as f64) + 0.5).floor() as usize;
        StageBoundaries { t1_end: at(f1), t2_end: at(f2), total, fallback_used: true }
    }

    /// Period containing `t`; a boundary epoch belongs to the earlier period.
    pub fn stage_of(&self, t: f64) -> Stage {
        if t <= self.t1_end as f64 {
            Stage::T1
        } else if t <= self.t2_end as f64 {
            Stage::T2
        } else {
            Stage::T3
        }
    }
}

/// `KAR(t) = (|DDP_e'(t)| + |DDP_h'(t)|) / 2` from least-squares curves fitted
/// to the whole history, evaluated at every record's `t`.
pub fn kar_series(ddp: &[DdpRecord], cfg: &MetricsConfig) -> Result<Vec<KarSample>> {
    let need = cfg.fit_degree + 2;
    if ddp.len() < need {
        return Err(Error::TooFewPoints { need, got: ddp.len() });
    }
    let ts: Vec<f64> = ddp.iter().map(|r| r.t).collect();
    let es: Vec<f64> = ddp.iter().map(|r| r.ddp_e).collect();
    let hs: Vec<f64> = ddp.iter().map(|r| r.ddp_h).collect();
    let de = lsq_polyfit(&ts, &es, cfg.fit_degree)?.derivative();
    let dh = lsq_polyfit(&ts, &hs, cfg.fit_degree)?.derivative();
    ts.iter()
        .map(|&t| Ok(KarSample { t, kar: 0.5 * (de.eval(t)?.abs() + dh.eval(t)?.abs()) }))
        .collect()
}

/// Splits a KAR history into formation, growth and exploration.
///
/// The peak is the first maximum. `t1_end` is the last sample before the
/// peak within 10% of the rise above the early minimum; `t2_end` is the
/// first sample after the peak within 10% of the fall to the late minimum.
/// Peaks at either end, or results violating `0 < t1 < t2 < total`, fall
/// back to the configured fractions of the schedule.
pub fn detect_stages(kar: &[KarSample], cfg: &MetricsConfig) -> Result<StageBoundaries> {
    if kar.len() < 10 {
        return Err(Error::TooFewPoints { need: 10, got: kar.len() });
    }
    if kar.iter().any(|k| !k.kar.is_finite() || !k.t.is_finite() || k.t < 0.0) {
        return Err(Error::invalid("KAR samples must be finite with t >= 0"));
    }
    let total = kar[kar.len() - 1].t.round() as usize;
    let fallback = || StageBoundaries::from_fractions(total, cfg.fallback_t1, cfg.fallback_t2);

    let mut peak = 0;
    for (i, k) in kar.iter().enumerate() {
        if k.kar > kar[peak].kar {
            peak = i;
        }
    }
    if peak == 0 || peak == kar.len() - 1 {
        return Ok(fallback());
    }
    let top = kar[peak].kar;

    let early_min = kar[..=peak].iter().map(|k| k.kar).fold(f64::INFINITY, f64::min);
    let rise = early_min + 0.1 * (top - early_min);
    let t1 = kar[..peak].iter().rev().find(|k| k.kar <= rise);

    let floor = kar[peak + 1..].iter().map(|k| k.kar).fold(f64::INFINITY, f64::min);
    let fall = floor + 0.1 * (top - floor);
    let t2 = kar[peak + 1..].iter().find(|k| k.kar <= fall);

    match (t1, t2) {
        (Some(a), Some(b)) => {
            StageBoundaries::new(a.t.round() as usize, b.t.round() as usize, total).or_else(|_| Ok(fallback()))
        }
        _ => Ok(fallback()),
    }
}
