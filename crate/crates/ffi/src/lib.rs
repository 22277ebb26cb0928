//! C ABI over the `stagewise` crate.
//!
//! Every fallible function returns a [`SwStatus`]. On failure the message is
//! kept per thread and can be copied out with [`sw_last_error`]. Objects are
//! opaque handles created by `*_new`/`*_read`/`*_load` functions and released
//! with the matching `*_free`. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use stagewise::augment::{dynamic_alpha, AlphaController};
use stagewise::data::{gen_synthetic, read_dataset, write_dataset, Dataset};
use stagewise::harness::{evaluate, train, Precision, RunLog, TrainConfig};
use stagewise::metrics::{ddp, detect_stages, kar_series, partition_batch, DdpRecord, KarSample, MetricsConfig, ProbBatch};
use stagewise::model::{checkpoint_precision, read_checkpoint, write_checkpoint, Checkpoint};
use stagewise::probe::probe_topk;
use stagewise::{Element, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwStatus {
    Ok = 0,
    /// Bad argument or configuration.
    InvalidArgument = 1,
    /// Unreadable, malformed or inconsistent data.
    Data = 2,
    /// Non-finite values or a singular fit.
    Numerical = 3,
    NullPointer = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwMetricsConfig {
    pub alpha: f64,
    pub beta: f64,
    pub fit_degree: u32,
    pub fallback_t1: f64,
    pub fallback_t2: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwStageBoundaries {
    pub t1_end: u32,
    pub t2_end: u32,
    pub total: u32,
    pub fallback_used: bool,
}

pub struct SwDataset(Dataset);

enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

pub struct SwModel(AnyCheckpoint);

pub struct SwRunLog(RunLog);

pub struct SwAlphaController(AlphaController);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SwStatus {
    match e.exit_code() {
        1 => SwStatus::InvalidArgument,
        3 => SwStatus::Numerical,
        _ => SwStatus::Data,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> SwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SwStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            SwStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            SwStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> FfiResult<()> {
    *deref_mut(out, what)? = value;
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    put(out, Box::into_raw(Box::new(value)), "output handle")
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sw_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn sw_metrics_config_default() -> SwMetricsConfig {
    let d = MetricsConfig::default();
    SwMetricsConfig {
        alpha: d.alpha,
        beta: d.beta,
        fit_degree: d.fit_degree as u32,
        fallback_t1: d.fallback_t1,
        fallback_t2: d.fallback_t2,
    }
}

fn metrics_config(c: &SwMetricsConfig) -> FfiResult<MetricsConfig> {
    let cfg = MetricsConfig {
        alpha: c.alpha,
        beta: c.beta,
        fit_degree: c.fit_degree as usize,
        fallback_t1: c.fallback_t1,
        fallback_t2: c.fallback_t2,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Easy and hard proportions of `n` rows of `classes` probabilities.
///
/// # Safety
/// `probs` must point to `n * classes` doubles; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn sw_ddp(
    probs: *const f64,
    n: usize,
    classes: usize,
    cfg: *const SwMetricsConfig,
    ddp_e: *mut f64,
    ddp_h: *mut f64,
) -> SwStatus {
    guard(|| {
        let cfg = metrics_config(deref(cfg, "cfg")?)?;
        let values = slice(probs, n.saturating_mul(classes), "probs")?;
        let batch = ProbBatch::from_probs(classes, values.to_vec())?;
        let (e, h) = ddp(&partition_batch(&batch, &cfg)?)?;
        put(ddp_e, e, "ddp_e")?;
        put(ddp_h, h, "ddp_h")
    })
}

/// KAR at each of the `n` epochs `ts`, written to `kar_out`.
///
/// # Safety
/// `ts`, `ddp_e`, `ddp_h` and `kar_out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sw_kar_series(
    ts: *const f64,
    ddp_e: *const f64,
    ddp_h: *const f64,
    n: usize,
    cfg: *const SwMetricsConfig,
    kar_out: *mut f64,
) -> SwStatus {
    guard(|| {
        let cfg = metrics_config(deref(cfg, "cfg")?)?;
        let (ts, es, hs) = (slice(ts, n, "ts")?, slice(ddp_e, n, "ddp_e")?, slice(ddp_h, n, "ddp_h")?);
        let records: Vec<DdpRecord> =
            (0..n).map(|i| DdpRecord { t: ts[i], ddp_e: es[i], ddp_h: hs[i] }).collect();
        let kar = kar_series(&records, &cfg)?;
        let out = slice_mut(kar_out, n, "kar_out")?;
        for (o, k) in out.iter_mut().zip(&kar) {
            *o = k.kar;
        }
        Ok(())
    })
}

/// Learning-period boundaries of a KAR series.
///
/// # Safety
/// `ts` and `kar` must each hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sw_detect_stages(
    ts: *const f64,
    kar: *const f64,
    n: usize,
    cfg: *const SwMetricsConfig,
    out: *mut SwStageBoundaries,
) -> SwStatus {
    guard(|| {
        let cfg = metrics_config(deref(cfg, "cfg")?)?;
        let (ts, ks) = (slice(ts, n, "ts")?, slice(kar, n, "kar")?);
        let samples: Vec<KarSample> = ts.iter().zip(ks).map(|(&t, &kar)| KarSample { t, kar }).collect();
        let b = detect_stages(&samples, &cfg)?;
        put(
            out,
            SwStageBoundaries {
                t1_end: b.t1_end as u32,
                t2_end: b.t2_end as u32,
                total: b.total as u32,
                fallback_used: b.fallback_used,
            },
            "out",
        )
    })
}

/// Target α for a batch with the given easy and hard proportions.
///
/// # Safety
/// `alpha` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sw_dynamic_alpha(ddp_e: f64, ddp_h: f64, alpha: *mut f64) -> SwStatus {
    guard(|| put(alpha, dynamic_alpha(ddp_e, ddp_h)?, "alpha"))
}

/// Creates a dynamic α controller with smoothing `tau`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sw_alpha_controller_new(tau: f64, alpha_init: f64, out: *mut *mut SwAlphaController) -> SwStatus {
    guard(|| put_handle(out, SwAlphaController(AlphaController::dynamic(tau, alpha_init)?)))
}

/// Advances the controller by one batch at fractional epoch `t` and writes
/// the smoothed α.
///
/// # Safety
/// `ctrl` must come from [`sw_alpha_controller_new`]; `alpha` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sw_alpha_controller_advance(
    ctrl: *mut SwAlphaController,
    ddp_e: f64,
    ddp_h: f64,
    t: f64,
    alpha: *mut f64,
) -> SwStatus {
    guard(|| {
        let c = deref_mut(ctrl, "ctrl")?;
        let a = c.0.advance((ddp_e, ddp_h), t)?;
        put(alpha, a, "alpha")
    })
}

/// # Safety
/// `ctrl` must be null or come from [`sw_alpha_controller_new`].
#[no_mangle]
pub unsafe extern "C" fn sw_alpha_controller_free(ctrl: *mut SwAlphaController) {
    free(ctrl)
}

/// Generates a synthetic RGB dataset.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_generate(
    n: usize,
    classes: usize,
    size: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut SwDataset,
) -> SwStatus {
    guard(|| put_handle(out, SwDataset(gen_synthetic(n, classes, size, noise, seed)?)))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_read(path: *const c_char, out: *mut *mut SwDataset) -> SwStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        put_handle(out, SwDataset(read_dataset(path)?))
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_write(ds: *const SwDataset, path: *const c_char) -> SwStatus {
    guard(|| {
        let ds = deref(ds, "ds")?;
        Ok(write_dataset(&ds.0, c_str(path, "path")?)?)
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_len(ds: *const SwDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n)
}

/// # Safety
/// `ds` must be null or a dataset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_free(ds: *mut SwDataset) {
    free(ds)
}

/// Loads a checkpoint that carries normalization statistics.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sw_model_load(path: *const c_char, out: *mut *mut SwModel) -> SwStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let ckpt = match checkpoint_precision(path)? {
            4 => AnyCheckpoint::F32(read_checkpoint(path)?),
            _ => AnyCheckpoint::F64(read_checkpoint(path)?),
        };
        let has_norm = match &ckpt {
            AnyCheckpoint::F32(c) => c.normalizer.is_some(),
            AnyCheckpoint::F64(c) => c.normalizer.is_some(),
        };
        if !has_norm {
            return Err(Error::InvalidArgument(format!("{path} carries no normalization statistics")).into());
        }
        put_handle(out, SwModel(ckpt))
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sw_model_save(model: *const SwModel, path: *const c_char) -> SwStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let path = c_str(path, "path")?;
        match &model.0 {
            AnyCheckpoint::F32(c) => write_checkpoint(path, c)?,
            AnyCheckpoint::F64(c) => write_checkpoint(path, c)?,
        }
        Ok(())
    })
}

fn eval_ckpt<T: Element>(c: &Checkpoint<T>, ds: &Dataset) -> FfiResult<(f64, f64)> {
    let norm = c.normalizer.as_ref().expect("checked on load");
    Ok(evaluate(&c.params, ds, norm)?)
}

/// Top-1 accuracy and mean max softmax probability over `ds`.
///
/// # Safety
/// Handles must be live; output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn sw_model_evaluate(
    model: *const SwModel,
    ds: *const SwDataset,
    top1: *mut f64,
    mean_max_prob: *mut f64,
) -> SwStatus {
    guard(|| {
        let (model, ds) = (deref(model, "model")?, deref(ds, "ds")?);
        let (a, p) = match &model.0 {
            AnyCheckpoint::F32(c) => eval_ckpt(c, &ds.0)?,
            AnyCheckpoint::F64(c) => eval_ckpt(c, &ds.0)?,
        };
        put(top1, a, "top1")?;
        put(mean_max_prob, p, "mean_max_prob")
    })
}

/// Top-k attention erasure probe. `ks` must be strictly increasing from 0;
/// `p_k` and `top1` receive one value per k.
///
/// # Safety
/// `ks`, `p_k` and `top1` must each hold `n_ks` elements; handles live.
#[no_mangle]
pub unsafe extern "C" fn sw_model_probe(
    model: *const SwModel,
    ds: *const SwDataset,
    ks: *const u32,
    n_ks: usize,
    fill: f64,
    p_k: *mut f64,
    top1: *mut f64,
) -> SwStatus {
    guard(|| {
        let (model, ds) = (deref(model, "model")?, deref(ds, "ds")?);
        let ks: Vec<usize> = slice(ks, n_ks, "ks")?.iter().map(|&k| k as usize).collect();
        let result = match &model.0 {
            AnyCheckpoint::F32(c) => probe_topk(&c.params, &ds.0, c.normalizer.as_ref().expect("checked"), &ks, fill)?,
            AnyCheckpoint::F64(c) => probe_topk(&c.params, &ds.0, c.normalizer.as_ref().expect("checked"), &ks, fill)?,
        };
        let (p_out, t_out) = (slice_mut(p_k, n_ks, "p_k")?, slice_mut(top1, n_ks, "top1")?);
        for (i, row) in result.rows.iter().enumerate() {
            p_out[i] = row.p_k;
            t_out[i] = row.top1;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a model handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sw_model_free(model: *mut SwModel) {
    free(model)
}

/// Trains a model from a JSON config (dotted keys) on two datasets. The
/// model and run log are returned even when training stopped on a
/// non-finite value; the status is then `SW_STATUS_NUMERICAL`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; handles live; outputs valid.
#[no_mangle]
pub unsafe extern "C" fn sw_train(
    config_json: *const c_char,
    train_ds: *const SwDataset,
    eval_ds: *const SwDataset,
    model_out: *mut *mut SwModel,
    log_out: *mut *mut SwRunLog,
) -> SwStatus {
    guard(|| {
        let cfg = TrainConfig::from_json(c_str(config_json, "config_json")?)?;
        let (tr, ev) = (deref(train_ds, "train_ds")?, deref(eval_ds, "eval_ds")?);
        deref_mut(model_out, "model_out")?;
        deref_mut(log_out, "log_out")?;
        let (ckpt, log, abort) = match cfg.precision {
            Precision::F32 => {
                let o = train::<f32>(&cfg, &tr.0, &ev.0)?;
                (AnyCheckpoint::F32(Checkpoint { params: o.params, normalizer: Some(o.normalizer) }), o.log, o.abort)
            }
            Precision::F64 => {
                let o = train::<f64>(&cfg, &tr.0, &ev.0)?;
                (AnyCheckpoint::F64(Checkpoint { params: o.params, normalizer: Some(o.normalizer) }), o.log, o.abort)
            }
        };
        put_handle(model_out, SwModel(ckpt))?;
        put_handle(log_out, SwRunLog(log))?;
        match abort {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sw_runlog_read(path: *const c_char, out: *mut *mut SwRunLog) -> SwStatus {
    guard(|| {
        let path = PathBuf::from(c_str(path, "path")?);
        put_handle(out, SwRunLog(RunLog::read(path)?))
    })
}

/// Number of epoch records, or 0 for a null handle.
///
/// # Safety
/// `log` must be null or a live run log handle.
#[no_mangle]
pub unsafe extern "C" fn sw_runlog_epochs(log: *const SwRunLog) -> usize {
    log.as_ref().map_or(0, |l| l.0.epochs().count())
}

/// Copies the epoch-level series into caller arrays of `len` elements.
/// Fails when `len` differs from [`sw_runlog_epochs`].
///
/// # Safety
/// Each array must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sw_runlog_series(
    log: *const SwRunLog,
    len: usize,
    epoch: *mut f64,
    ddp_e: *mut f64,
    ddp_h: *mut f64,
    eval_acc: *mut f64,
) -> SwStatus {
    guard(|| {
        let log = deref(log, "log")?;
        let n = log.0.epochs().count();
        if n != len {
            return Err(Error::InvalidArgument(format!("run log has {n} epochs, buffers hold {len}")).into());
        }
        let (t, e, h, a) = (
            slice_mut(epoch, len, "epoch")?,
            slice_mut(ddp_e, len, "ddp_e")?,
            slice_mut(ddp_h, len, "ddp_h")?,
            slice_mut(eval_acc, len, "eval_acc")?,
        );
        for (i, r) in log.0.epochs().enumerate() {
            t[i] = r.epoch as f64;
            e[i] = r.ddp_e;
            h[i] = r.ddp_h;
            a[i] = r.eval_acc;
        }
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sw_runlog_write(log: *const SwRunLog, path: *const c_char) -> SwStatus {
    guard(|| {
        let log = deref(log, "log")?;
        Ok(log.0.write(c_str(path, "path")?)?)
    })
}

/// # Safety
/// `log` must be null or a run log handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sw_runlog_free(log: *mut SwRunLog) {
    free(log)
}
