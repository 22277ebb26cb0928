//! The training loop: per mini-batch it scores the raw batch with the
//! current model, advances the α controller, builds mixed (and optionally
//! erased) pairs and takes one optimizer step.

mod config;
mod optim;
mod runlog;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{
    derangement, mixup, patch_erasing_mix, random_erase, sample_gamma, sample_lambda, AlphaController,
};
use crate::data::{derive_seed, BatchPlan, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::{ddp, partition_batch, ProbBatch, Stage};
use crate::model::{infer, soft_cross_entropy, vit_forward, ModelParams};
use crate::tensor::{Element, Graph, Tensor};

pub use config::{
    live_boundaries, live_stage, AlphaBounds, AugConfig, AugMode, Erasing, ErasingWindow, OptimConfig, Precision,
    StageSource, TrainConfig,
};
pub use optim::{lr_at, AdamW};
pub use runlog::{BatchRecord, EpochRecord, LogLine, RunLog, RunLogWriter};

/// Batch size for every untaped pass over a dataset. Fixed so that
/// evaluation and the probe baseline see identical arithmetic.
pub const EVAL_BATCH: usize = 250;

const INIT_STREAM: u64 = 0x1417;
const AUG_STREAM: u64 = 0xA06;

/// Top-1 accuracy and mean max softmax probability of a batch of logits.
pub fn evaluate_logits<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, f64)> {
    let (correct, mass) = score_logits(logits, labels)?;
    let n = labels.len() as f64;
    Ok((correct as f64 / n, mass / n))
}

/// Correct-prediction count and summed max softmax probability.
pub(crate) fn score_logits<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(usize, f64)> {
    let probs = ProbBatch::from_logits(logits)?;
    if probs.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape("evaluate", format!("{} logit rows for {} labels", probs.len(), labels.len())));
    }
    let c = probs.classes();
    let z = probs.logits().expect("built from logits");
    let mut correct = 0;
    for (row, &label) in z.chunks(c).zip(labels) {
        let mut best = 0;
        for k in 1..c {
            if row[k] > row[best] {
                best = k;
            }
        }
        correct += (best == label) as usize;
    }
    Ok((correct, probs.max_probs().iter().sum()))
}

fn check_compatible(cfg: &crate::model::VitConfig, ds: &Dataset, what: &str) -> Result<()> {
    if ds.channels != cfg.channels || ds.height != cfg.image_size || ds.width != cfg.image_size {
        return Err(Error::invalid(format!(
            "{what} images are {}x{}x{}, model expects {}x{}x{}",
            ds.channels, ds.height, ds.width, cfg.channels, cfg.image_size, cfg.image_size
        )));
    }
    if ds.n_classes != cfg.n_classes {
        return Err(Error::invalid(format!(
            "{what} has {} classes, model has {}",
            ds.n_classes, cfg.n_classes
        )));
    }
    Ok(())
}

/// Top-1 accuracy and mean max softmax probability over a dataset.
pub fn evaluate<T: Element>(params: &ModelParams<T>, ds: &Dataset, norm: &Normalizer) -> Result<(f64, f64)> {
    check_compatible(params.config(), ds, "dataset")?;
    let all: Vec<usize> = (0..ds.n).collect();
    let (mut correct, mut mass) = (0usize, 0.0f64);
    for chunk in all.chunks(EVAL_BATCH) {
        let out = infer(params, &ds.images(chunk, norm)?)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.label(i)).collect();
        let (c, m) = score_logits(&out.logits, &labels)?;
        correct += c;
        mass += m;
    }
    Ok((correct as f64 / ds.n as f64, mass / ds.n as f64))
}

/// Result of a training run. `abort` is set when training stopped on a
/// non-finite value; `params` then hold the last finite state.
#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub normalizer: Normalizer,
    pub log: RunLog,
    pub abort: Option<Error>,
}

pub fn train<T: Element>(cfg: &TrainConfig, train_ds: &Dataset, eval_ds: &Dataset) -> Result<TrainOutcome<T>> {
    train_with(cfg, train_ds, eval_ds, |_| Ok(()))
}

fn slice_image<T: Element>(batch: &Tensor<T>, i: usize) -> Result<Tensor<T>> {
    let s = &batch.shape()[1..];
    let len: usize = s.iter().product();
    Tensor::new(s.to_vec(), batch.data()[i * len..(i + 1) * len].to_vec())
}

fn one_hot<T: Element>(label: usize, classes: usize) -> Tensor<T> {
    let mut v = vec![T::zero(); classes];
    v[label] = T::one();
    Tensor::new([classes], v).expect("non-empty")
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

struct StepOutput {
    loss: f64,
    ddp: (f64, f64),
    correct: usize,
}

/// Like [`train`], calling `on_epoch` with each epoch's new log lines.
pub fn train_with<T: Element, F>(
    cfg: &TrainConfig,
    train_ds: &Dataset,
    eval_ds: &Dataset,
    mut on_epoch: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(&[LogLine]) -> Result<()>,
{
    cfg.validate()?;
    check_compatible(&cfg.model, train_ds, "training set")?;
    check_compatible(&cfg.model, eval_ds, "evaluation set")?;
    if cfg.batch_size > train_ds.n {
        return Err(Error::Config(format!(
            "train.batch_size {} exceeds the {} training samples",
            cfg.batch_size, train_ds.n
        )));
    }
    let boundaries = live_boundaries(cfg)?;
    let mut controller = match cfg.aug.mode {
        AugMode::Vanilla => None,
        AugMode::Dynamic => Some(AlphaController::dynamic(cfg.aug.tau, cfg.aug.alpha_init)?),
        AugMode::Static => {
            let b = crate::metrics::StageBoundaries::new(boundaries.t1_end, boundaries.t2_end, cfg.epochs)
                .map_err(|e| Error::Config(format!("static schedule needs three non-empty periods: {e}")))?;
            Some(AlphaController::static_schedule(b))
        }
        AugMode::Fixed => Some(AlphaController::fixed(cfg.aug.alpha.expect("validated"))?),
    };

    let norm = Normalizer::fit(train_ds);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[INIT_STREAM]));
    let mut params = ModelParams::<T>::init(&cfg.model, &mut init_rng)?;
    let mut opt = AdamW::new(cfg.optim.clone());
    let n_batches = train_ds.n.div_ceil(cfg.batch_size);
    let warmup = cfg.optim.warmup_epochs * n_batches;
    let total_steps = cfg.epochs * n_batches;
    let mut log = RunLog::new();
    let start = Instant::now();
    let mut global_batch = 0usize;
    let classes = cfg.model.n_classes;
    let plain = cfg.aug.mode == AugMode::Vanilla && cfg.aug.erasing == Erasing::Off;

    for epoch in 1..=cfg.epochs {
        let plan = BatchPlan::new(train_ds.n, cfg.batch_size, cfg.seed, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[AUG_STREAM, epoch as u64]));
        let first_line = log.lines.len();
        let (mut loss_sum, mut correct, mut ddp_e_sum, mut ddp_h_sum) = (0.0, 0usize, 0.0, 0.0);
        let mut erasing_seen = false;
        let mut alpha_now = controller.as_ref().map_or(0.0, |c| c.alpha_bar);

        for (b, idx) in plan.chunks().enumerate() {
            global_batch += 1;
            let t = (epoch - 1) as f64 + (b + 1) as f64 / n_batches as f64;
            let stage = boundaries.stage_of(t);
            let erasing = cfg.aug.erasing != Erasing::Off
                && (cfg.aug.erasing_window == ErasingWindow::All || stage == Stage::T3);
            erasing_seen |= erasing;
            let lr = lr_at(&cfg.optim, opt.steps(), warmup, total_steps);
            let labels: Vec<usize> = idx.iter().map(|&i| train_ds.label(i)).collect();
            let images = train_ds.images::<T>(idx, &norm)?;

            let step = (|| -> Result<StepOutput> {
                let score = |logits: &Tensor<T>| -> Result<((f64, f64), usize)> {
                    let probs = ProbBatch::from_logits(logits)?;
                    let d = ddp(&partition_batch(&probs, &cfg.metrics)?)?;
                    Ok((d, score_logits(logits, &labels)?.0))
                };
                let (inputs, targets, pre) = if plain {
                    let targets = train_ds.one_hot::<T>(idx)?;
                    (images, targets, None)
                } else {
                    let raw = infer(&params, &images)?;
                    let (d, c) = score(&raw.logits)?;
                    let (inputs, targets) =
                        build_pairs(cfg, &images, &labels, classes, controller.as_mut(), d, t, stage, erasing, &mut rng)
                            .map(|(x, y, a)| {
                                alpha_now = a;
                                (x, y)
                            })?;
                    (inputs, targets, Some((d, c)))
                };
                let mut g = Graph::<T>::new();
                let vars = params.bind(&mut g, true);
                let x = g.constant(inputs);
                let (logits, _) = vit_forward(&cfg.model, &mut g, &vars, x)?;
                let (d, c) = match pre {
                    Some(p) => p,
                    None => score(g.value(logits)?)?,
                };
                let loss = soft_cross_entropy(&mut g, logits, &targets)?;
                let loss_value = g.value(loss)?.data()[0].f64();
                let grads = g.backward(loss)?;
                let mut by_name = BTreeMap::new();
                for (name, var) in &vars {
                    if let Some(t) = grads.get(*var) {
                        if !t.all_finite() {
                            return Err(Error::NonFinite { op: "backward" });
                        }
                        by_name.insert(name.clone(), t.clone());
                    }
                }
                opt.step(&mut params, &by_name, lr)?;
                Ok(StepOutput { loss: loss_value, ddp: d, correct: c })
            })();

            let out = match step {
                Ok(out) => out,
                Err(e) if is_numerical(&e) => {
                    let abort = Error::Diverged { epoch, batch: b + 1, reason: e.to_string() };
                    return Ok(TrainOutcome { params, normalizer: norm, log, abort: Some(abort) });
                }
                Err(e) => return Err(e),
            };
            if cfg.log_batches {
                log.push_batch(BatchRecord { batch: global_batch, ddp_e: out.ddp.0, ddp_h: out.ddp.1, alpha_t: alpha_now })?;
            }
            loss_sum += out.loss * idx.len() as f64;
            correct += out.correct;
            ddp_e_sum += out.ddp.0;
            ddp_h_sum += out.ddp.1;
        }

        let (eval_acc, _) = evaluate(&params, eval_ds, &norm)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_ds.n as f64,
            train_acc: correct as f64 / train_ds.n as f64,
            eval_acc,
            ddp_e: ddp_e_sum / n_batches as f64,
            ddp_h: ddp_h_sum / n_batches as f64,
            alpha_bar: alpha_now,
            patch_erasing_active: erasing_seen,
            wall_time: if cfg.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        if let Err(e) = log.push_epoch(record) {
            if is_numerical(&e) {
                let abort = Error::Diverged { epoch, batch: n_batches, reason: e.to_string() };
                return Ok(TrainOutcome { params, normalizer: norm, log, abort: Some(abort) });
            }
            return Err(e);
        }
        on_epoch(&log.lines[first_line..])?;
    }
    Ok(TrainOutcome { params, normalizer: norm, log, abort: None })
}

/// Pairs every sample with a derangement partner and mixes (and possibly
/// erases) each pair. Returns inputs, soft targets and the α used.
#[allow(clippy::too_many_arguments)]
fn build_pairs<T: Element>(
    cfg: &TrainConfig,
    images: &Tensor<T>,
    labels: &[usize],
    classes: usize,
    controller: Option<&mut AlphaController>,
    ddp: (f64, f64),
    t: f64,
    stage: Stage,
    erasing: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, Tensor<T>, f64)> {
    let (alpha, lambda) = match controller {
        Some(c) => {
            let a = cfg.aug.bounds(stage).apply(c.advance(ddp, t)?);
            (a, sample_lambda(a, rng)?)
        }
        None => (0.0, 1.0),
    };
    let n = labels.len();
    let partner = derangement(n, rng);
    let mut xs = Vec::with_capacity(images.len());
    let mut ys = Vec::with_capacity(n * classes);
    for i in 0..n {
        let j = partner[i];
        let (xi, xj) = (slice_image(images, i)?, slice_image(images, j)?);
        let (yi, yj) = (one_hot::<T>(labels[i], classes), one_hot::<T>(labels[j], classes));
        let (x, y) = if erasing && cfg.aug.erasing == Erasing::Patch {
            let (gi, gj) = (sample_gamma(cfg.aug.mu, rng), sample_gamma(cfg.aug.mu, rng));
            let (x, y, _) =
                patch_erasing_mix(&xi, &yi, &xj, &yj, lambda, gi, gj, cfg.aug.mu, cfg.model.patch_size, T::zero(), rng)?;
            (x, y)
        } else {
            let (mut x, y) = mixup(&xi, &yi, &xj, &yj, lambda)?;
            if erasing {
                random_erase(&mut x, cfg.aug.random_erase_prob, T::zero(), rng)?;
            }
            (x, y)
        };
        xs.extend_from_slice(x.data());
        ys.extend_from_slice(y.data());
    }
    Ok((Tensor::new(images.shape().to_vec(), xs)?, Tensor::new([n, classes], ys)?, alpha))
}
