use std::path::PathBuf;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{MetricsConfig, Stage, StageBoundaries};
use crate::model::VitConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugMode {
    /// No mixing; one-hot labels.
    Vanilla,
    Dynamic,
    Static,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Erasing {
    Off,
    /// Patch-aligned erasing with label decay.
    Patch,
    /// A random rectangle per image, labels untouched.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErasingWindow {
    /// Only in the exploration period.
    T3,
    All,
}

/// Optional per-period clamp on the α used for sampling λ.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlphaBounds {
    pub floor: Option<f64>,
    pub cap: Option<f64>,
}

impl AlphaBounds {
    pub fn apply(&self, alpha: f64) -> f64 {
        let a = self.floor.map_or(alpha, |f| alpha.max(f));
        self.cap.map_or(a, |c| a.min(c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugConfig {
    pub mode: AugMode,
    pub tau: f64,
    pub alpha_init: f64,
    /// Required by `fixed` mode.
    pub alpha: Option<f64>,
    pub erasing: Erasing,
    pub mu: f64,
    pub erasing_window: ErasingWindow,
    /// Probability that an image is erased in `random` erasing mode.
    pub random_erase_prob: f64,
    pub overrides: [AlphaBounds; 3],
}

impl AugConfig {
    pub fn bounds(&self, stage: Stage) -> &AlphaBounds {
        &self.overrides[stage as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StageSource {
    LiveFractions { t1: f64, t2: f64 },
    Precomputed { t1_end: Option<usize>, t2_end: Option<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: VitConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub optim: OptimConfig,
    pub metrics: MetricsConfig,
    pub aug: AugConfig,
    pub stage: StageSource,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    /// Also write one record per mini-batch.
    pub log_batches: bool,
    /// Record elapsed seconds; off gives byte-reproducible logs.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: VitConfig::default(),
            epochs: 30,
            batch_size: 64,
            seed: 0,
            precision: Precision::F32,
            optim: OptimConfig {
                lr: 3e-4,
                min_lr: 1e-5,
                weight_decay: 0.05,
                warmup_epochs: 3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            metrics: MetricsConfig::default(),
            aug: AugConfig {
                mode: AugMode::Dynamic,
                tau: 0.9,
                alpha_init: 0.05,
                alpha: None,
                erasing: Erasing::Off,
                mu: 0.5,
                erasing_window: ErasingWindow::T3,
                random_erase_prob: 0.25,
                overrides: [AlphaBounds::default(); 3],
            },
            stage: StageSource::LiveFractions { t1: 0.15, t2: 0.35 },
            train_path: None,
            eval_path: None,
            log_batches: false,
            log_wall_time: true,
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn bad(key: &str, want: &str, v: &Value) -> Error {
    Error::Config(format!("{key}: expected {want}, got {v}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| bad(key, "a number", v))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| bad(key, "a non-negative integer", v))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

fn choice<T: Copy>(key: &str, v: &Value, options: &[(&str, T)]) -> Result<T> {
    let s = as_str(key, v)?;
    options.iter().find(|(name, _)| *name == s).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("{key}: expected one of {names:?}, got {s:?}"))
    })
}

const MODES: [(&str, AugMode); 4] = [
    ("vanilla", AugMode::Vanilla),
    ("dynamic", AugMode::Dynamic),
    ("static", AugMode::Static),
    ("fixed", AugMode::Fixed),
];
const ERASING: [(&str, Erasing); 3] = [("off", Erasing::Off), ("patch", Erasing::Patch), ("random", Erasing::Random)];
const WINDOWS: [(&str, ErasingWindow); 2] = [("t3", ErasingWindow::T3), ("all", ErasingWindow::All)];
const PRECISIONS: [(&str, Precision); 2] = [("f32", Precision::F32), ("f64", Precision::F64)];
const STAGES: [&str; 3] = ["t1", "t2", "t3"];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, t)| *t == v).map(|(n, _)| *n).expect("every variant is named")
}

impl TrainConfig {
    /// Parses a JSON document whose keys are dotted config paths. Nested
    /// objects are flattened, so `{"model": {"dim": 8}}` equals
    /// `{"model.dim": 8}`. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        if !doc.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let mut entries = Vec::new();
        flatten("", &doc, &mut entries);
        let mut cfg = TrainConfig::default();
        let (mut t1_frac, mut t2_frac) = (0.15, 0.35);
        let (mut t1_end, mut t2_end) = (None, None);
        let mut source = "live";
        for (key, v) in &entries {
            let k = key.as_str();
            match k {
                "model.image_size" => cfg.model.image_size = as_usize(k, v)?,
                "model.patch_size" => cfg.model.patch_size = as_usize(k, v)?,
                "model.channels" => cfg.model.channels = as_usize(k, v)?,
                "model.dim" => cfg.model.dim = as_usize(k, v)?,
                "model.depth" => cfg.model.depth = as_usize(k, v)?,
                "model.heads" => cfg.model.heads = as_usize(k, v)?,
                "model.mlp_ratio" => cfg.model.mlp_ratio = as_usize(k, v)?,
                "model.n_classes" => cfg.model.n_classes = as_usize(k, v)?,
                "train.epochs" => cfg.epochs = as_usize(k, v)?,
                "train.batch_size" => cfg.batch_size = as_usize(k, v)?,
                "train.seed" | "seed" => cfg.seed = v.as_u64().ok_or_else(|| bad(k, "a non-negative integer", v))?,
                "train.precision" => cfg.precision = choice(k, v, &PRECISIONS)?,
                "optim.lr" => cfg.optim.lr = as_f64(k, v)?,
                "optim.min_lr" => cfg.optim.min_lr = as_f64(k, v)?,
                "optim.weight_decay" => cfg.optim.weight_decay = as_f64(k, v)?,
                "optim.warmup_epochs" => cfg.optim.warmup_epochs = as_usize(k, v)?,
                "optim.beta1" => cfg.optim.beta1 = as_f64(k, v)?,
                "optim.beta2" => cfg.optim.beta2 = as_f64(k, v)?,
                "optim.eps" => cfg.optim.eps = as_f64(k, v)?,
                "metrics.alpha" => cfg.metrics.alpha = as_f64(k, v)?,
                "metrics.beta" => cfg.metrics.beta = as_f64(k, v)?,
                "metrics.fit_degree" => cfg.metrics.fit_degree = as_usize(k, v)?,
                "metrics.fallback_t1" => cfg.metrics.fallback_t1 = as_f64(k, v)?,
                "metrics.fallback_t2" => cfg.metrics.fallback_t2 = as_f64(k, v)?,
                "aug.mode" => cfg.aug.mode = choice(k, v, &MODES)?,
                "aug.tau" => cfg.aug.tau = as_f64(k, v)?,
                "aug.alpha_init" => cfg.aug.alpha_init = as_f64(k, v)?,
                "aug.alpha" => cfg.aug.alpha = if v.is_null() { None } else { Some(as_f64(k, v)?) },
                "aug.erasing" => cfg.aug.erasing = choice(k, v, &ERASING)?,
                "aug.mu" => cfg.aug.mu = as_f64(k, v)?,
                "aug.erasing_window" => cfg.aug.erasing_window = choice(k, v, &WINDOWS)?,
                "aug.random_erase_prob" => cfg.aug.random_erase_prob = as_f64(k, v)?,
                "stage.source" => {
                    source = match as_str(k, v)? {
                        "live" => "live",
                        "precomputed" => "precomputed",
                        other => {
                            return Err(Error::Config(format!("{k}: expected \"live\" or \"precomputed\", got {other:?}")))
                        }
                    }
                }
                "stage.t1_frac" => t1_frac = as_f64(k, v)?,
                "stage.t2_frac" => t2_frac = as_f64(k, v)?,
                "stage.t1_end" => t1_end = if v.is_null() { None } else { Some(as_usize(k, v)?) },
                "stage.t2_end" => t2_end = if v.is_null() { None } else { Some(as_usize(k, v)?) },
                "data.train" => cfg.train_path = Some(PathBuf::from(as_str(k, v)?)),
                "data.eval" => cfg.eval_path = Some(PathBuf::from(as_str(k, v)?)),
                "log.batches" => cfg.log_batches = as_bool(k, v)?,
                "log.wall_time" => cfg.log_wall_time = as_bool(k, v)?,
                _ => {
                    let parts: Vec<&str> = k.split('.').collect();
                    match parts.as_slice() {
                        ["aug", "override", stage, bound] if STAGES.contains(stage) => {
                            let i = STAGES.iter().position(|s| s == stage).expect("checked");
                            let value = if v.is_null() { None } else { Some(as_f64(k, v)?) };
                            match *bound {
                                "floor" => cfg.aug.overrides[i].floor = value,
                                "cap" => cfg.aug.overrides[i].cap = value,
                                _ => return Err(Error::Config(format!("unknown config key {k:?}"))),
                            }
                        }
                        _ => return Err(Error::Config(format!("unknown config key {k:?}"))),
                    }
                }
            }
        }
        cfg.stage = if source == "live" {
            StageSource::LiveFractions { t1: t1_frac, t2: t2_frac }
        } else {
            StageSource::Precomputed { t1_end, t2_end }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat dotted-key form; `from_json` of this text gives back `self`.
    pub fn to_json(&self) -> String {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        let md = &self.model;
        for (k, v) in [
            ("model.image_size", md.image_size),
            ("model.patch_size", md.patch_size),
            ("model.channels", md.channels),
            ("model.dim", md.dim),
            ("model.depth", md.depth),
            ("model.heads", md.heads),
            ("model.mlp_ratio", md.mlp_ratio),
            ("model.n_classes", md.n_classes),
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
            ("optim.warmup_epochs", self.optim.warmup_epochs),
            ("metrics.fit_degree", self.metrics.fit_degree),
        ] {
            put(k, v.into());
        }
        put("train.seed", self.seed.into());
        put("train.precision", name_of(&PRECISIONS, self.precision).into());
        let o = &self.optim;
        for (k, v) in [
            ("optim.lr", o.lr),
            ("optim.min_lr", o.min_lr),
            ("optim.weight_decay", o.weight_decay),
            ("optim.beta1", o.beta1),
            ("optim.beta2", o.beta2),
            ("optim.eps", o.eps),
            ("metrics.alpha", self.metrics.alpha),
            ("metrics.beta", self.metrics.beta),
            ("metrics.fallback_t1", self.metrics.fallback_t1),
            ("metrics.fallback_t2", self.metrics.fallback_t2),
            ("aug.tau", self.aug.tau),
            ("aug.alpha_init", self.aug.alpha_init),
            ("aug.mu", self.aug.mu),
            ("aug.random_erase_prob", self.aug.random_erase_prob),
        ] {
            put(k, v.into());
        }
        put("aug.mode", name_of(&MODES, self.aug.mode).into());
        put("aug.alpha", self.aug.alpha.into());
        put("aug.erasing", name_of(&ERASING, self.aug.erasing).into());
        put("aug.erasing_window", name_of(&WINDOWS, self.aug.erasing_window).into());
        for (i, s) in STAGES.iter().enumerate() {
            let b = &self.aug.overrides[i];
            if let Some(f) = b.floor {
                put(&format!("aug.override.{s}.floor"), f.into());
            }
            if let Some(c) = b.cap {
                put(&format!("aug.override.{s}.cap"), c.into());
            }
        }
        match &self.stage {
            StageSource::LiveFractions { t1, t2 } => {
                put("stage.source", "live".into());
                put("stage.t1_frac", (*t1).into());
                put("stage.t2_frac", (*t2).into());
            }
            StageSource::Precomputed { t1_end, t2_end } => {
                put("stage.source", "precomputed".into());
                put("stage.t1_end", (*t1_end).into());
                put("stage.t2_end", (*t2_end).into());
            }
        }
        if let Some(p) = &self.train_path {
            put("data.train", p.display().to_string().into());
        }
        if let Some(p) = &self.eval_path {
            put("data.eval", p.display().to_string().into());
        }
        put("log.batches", self.log_batches.into());
        put("log.wall_time", self.log_wall_time.into());
        serde_json::to_string_pretty(&Value::Object(m)).expect("config serializes")
    }

    /// First eight hex digits of the SHA-256 of the flat config.
    pub fn hash8(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.metrics.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.epochs == 0 {
            return fail("train.epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("train.batch_size must be positive".into());
        }
        let o = &self.optim;
        if !(o.lr > 0.0) || !(o.min_lr >= 0.0) || o.min_lr > o.lr {
            return fail(format!("optim.lr must be positive and >= optim.min_lr >= 0, got {} / {}", o.lr, o.min_lr));
        }
        if !(o.weight_decay >= 0.0) {
            return fail(format!("optim.weight_decay must be non-negative, got {}", o.weight_decay));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return fail("optim.beta1/beta2 must be in [0, 1) and optim.eps positive".into());
        }
        let a = &self.aug;
        if !(0.0..=1.0).contains(&a.tau) {
            return fail(format!("aug.tau must be in [0, 1], got {}", a.tau));
        }
        if !(a.alpha_init > 0.0 && a.alpha_init <= 1.0) {
            return fail(format!("aug.alpha_init must be in (0, 1], got {}", a.alpha_init));
        }
        match (a.mode, a.alpha) {
            (AugMode::Fixed, None) => return fail("aug.mode \"fixed\" requires aug.alpha".into()),
            (AugMode::Fixed, Some(v)) if !(v > 0.0) => return fail(format!("aug.alpha must be positive, got {v}")),
            _ => {}
        }
        if !(a.mu > 0.0 && a.mu <= 1.0) {
            return fail(format!("aug.mu must be in (0, 1], got {}", a.mu));
        }
        if !(0.0..=1.0).contains(&a.random_erase_prob) {
            return fail(format!("aug.random_erase_prob must be in [0, 1], got {}", a.random_erase_prob));
        }
        for (i, b) in a.overrides.iter().enumerate() {
            for v in [b.floor, b.cap].into_iter().flatten() {
                if !(v > 0.0) {
                    return fail(format!("aug.override.{}: bounds must be positive, got {v}", STAGES[i]));
                }
            }
            if let (Some(f), Some(c)) = (b.floor, b.cap) {
                if f > c {
                    return fail(format!("aug.override.{}: floor {f} exceeds cap {c}", STAGES[i]));
                }
            }
        }
        match &self.stage {
            StageSource::LiveFractions { t1, t2 } => {
                if !(0.0 < *t1 && t1 < t2 && *t2 < 1.0) {
                    return fail(format!("stage fractions must satisfy 0 < t1 < t2 < 1, got ({t1}, {t2})"));
                }
            }
            StageSource::Precomputed { t1_end, t2_end } => match (t1_end, t2_end) {
                (Some(t1), Some(t2)) => {
                    StageBoundaries::new(*t1, *t2, self.epochs).map_err(|e| Error::Config(e.to_string()))?;
                }
                _ => return fail("stage.source \"precomputed\" requires stage.t1_end and stage.t2_end".into()),
            },
        }
        Ok(())
    }
}

/// Stage boundaries the training loop uses while running.
pub fn live_boundaries(cfg: &TrainConfig) -> Result<StageBoundaries> {
    match &cfg.stage {
        StageSource::LiveFractions { t1, t2 } => {
            let mut b = StageBoundaries::from_fractions(cfg.epochs, *t1, *t2);
            b.fallback_used = false;
            Ok(b)
        }
        StageSource::Precomputed { t1_end: Some(t1), t2_end: Some(t2) } => {
            StageBoundaries::new(*t1, *t2, cfg.epochs).map_err(|e| Error::Config(e.to_string()))
        }
        StageSource::Precomputed { .. } => Err(Error::Config("precomputed stage source is missing boundaries".into())),
    }
}

/// Learning period containing fractional epoch `t`.
pub fn live_stage(t: f64, cfg: &TrainConfig) -> Result<Stage> {
    if !(0.0..=cfg.epochs as f64).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside schedule [0, {}]", cfg.epochs)));
    }
    Ok(live_boundaries(cfg)?.stage_of(t))
}
