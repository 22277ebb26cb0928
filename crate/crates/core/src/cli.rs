//! Command-line front end. [`dispatch`] maps every outcome to an exit
//! code: 0 success, 1 usage or config error, 2 data error, 3 numerical abort.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::data::{gen_synthetic_channels, read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::harness::{train_with, Precision, RunLogWriter, TrainConfig};
use crate::metrics::MetricsConfig;
use crate::model::{checkpoint_precision, read_checkpoint, write_checkpoint, Checkpoint};
use crate::probe::probe_topk;
use crate::report::{analyze, compare_logs};
use crate::tensor::Element;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "STAGEWISE_SEED";

#[derive(Parser, Debug)]
#[command(name = "stagewise", version, about = "Stage-aware training dynamics for tiny vision transformers")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic image classification dataset
    GenData(GenDataArgs),
    /// Train a model and write a run directory
    Train(TrainArgs),
    /// Fit DDP curves, compute KAR and detect learning periods from a run log
    Analyze(AnalyzeArgs),
    /// Erase each sample's most attended patches and report confidence and accuracy
    Probe(ProbeArgs),
    /// Per-epoch DDP differences between two run logs
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = crate::data::DEFAULT_NOISE)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON config with dotted keys
    #[arg(long)]
    config: PathBuf,
    /// Training set, overriding data.train
    #[arg(long)]
    train: Option<PathBuf>,
    /// Evaluation set, overriding data.eval
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Exact output directory instead of <runs>/<hash>-<timestamp>
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
}

#[derive(Args, Debug)]
struct MetricArgs {
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = 5)]
    fit_degree: usize,
    #[arg(long, default_value_t = 0.15)]
    fallback_t1: f64,
    #[arg(long, default_value_t = 0.35)]
    fallback_t2: f64,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    log: PathBuf,
    /// Output directory; defaults to the log's directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    metrics: MetricArgs,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
    ks: Vec<usize>,
    /// Fill value in normalized units; 0 is the channel mean
    #[arg(long, default_value_t = 0.0)]
    fill: f64,
    /// CSV path; defaults to probe.csv next to the checkpoint
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "erasing_ddp.csv")]
    out: PathBuf,
}

/// Runs one command line (including the program name) and returns the
/// process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Probe(a) => probe_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let ds = gen_synthetic_channels(a.n, a.classes, a.size, a.channels, a.noise, a.seed)?;
    write_dataset(&ds, &a.out)?;
    println!("wrote {} samples to {}", ds.n, a.out.display());
    Ok(())
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = TrainConfig::from_json(&text)?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.seed = seed
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}")))?;
    }
    Ok(cfg)
}

fn run_dir_name(cfg: &TrainConfig) -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("{}-{secs}", cfg.hash8())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = read_config(&a.config)?;
    if a.train.is_some() {
        cfg.train_path = a.train;
    }
    if a.eval.is_some() {
        cfg.eval_path = a.eval;
    }
    cfg.validate()?;
    let train_path = cfg.train_path.clone().ok_or_else(|| Error::Config("data.train is not set".into()))?;
    let eval_path = cfg.eval_path.clone().ok_or_else(|| Error::Config("data.eval is not set".into()))?;
    let train_ds = read_dataset(&train_path)?;
    let eval_ds = read_dataset(&eval_path)?;
    let dir = a.run_dir.unwrap_or_else(|| a.runs.join(run_dir_name(&cfg)));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
    match cfg.precision {
        Precision::F32 => train_into::<f32>(&cfg, &train_ds, &eval_ds, &dir),
        Precision::F64 => train_into::<f64>(&cfg, &train_ds, &eval_ds, &dir),
    }
}

fn train_into<T: Element>(
    cfg: &TrainConfig,
    train_ds: &crate::data::Dataset,
    eval_ds: &crate::data::Dataset,
    dir: &Path,
) -> Result<()> {
    let mut writer = RunLogWriter::create(dir.join("runlog.jsonl"))?;
    let outcome = train_with::<T, _>(cfg, train_ds, eval_ds, |lines| {
        for line in lines {
            if let crate::harness::LogLine::Epoch(e) = line {
                println!(
                    "epoch {:>3}  loss {:.4}  train {:.4}  eval {:.4}  ddp_e {:.3}  ddp_h {:.3}  alpha {:.3}",
                    e.epoch, e.train_loss, e.train_acc, e.eval_acc, e.ddp_e, e.ddp_h, e.alpha_bar
                );
            }
        }
        writer.append(lines)
    })?;
    let ckpt = Checkpoint { params: outcome.params, normalizer: Some(outcome.normalizer) };
    write_checkpoint(dir.join("checkpoint.bin"), &ckpt)?;
    println!("run directory: {}", dir.display());
    match outcome.abort {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    let m = a.metrics;
    let cfg = MetricsConfig {
        alpha: m.alpha,
        beta: m.beta,
        fit_degree: m.fit_degree,
        fallback_t1: m.fallback_t1,
        fallback_t2: m.fallback_t2,
    };
    let out = a.out.unwrap_or_else(|| a.log.parent().map(Path::to_path_buf).unwrap_or_default());
    let analysis = analyze(&a.log, &cfg, &out)?;
    let s = analysis.stages;
    println!(
        "t1_end {}  t2_end {}  total {}  fallback {}  -> {}",
        s.t1_end,
        s.t2_end,
        s.total,
        s.fallback_used,
        out.display()
    );
    Ok(())
}

fn probe_with<T: Element>(a: &ProbeArgs, ds: &crate::data::Dataset) -> Result<crate::probe::ProbeResult> {
    let ckpt = read_checkpoint::<T>(&a.checkpoint)?;
    let norm = ckpt
        .normalizer
        .ok_or_else(|| Error::invalid(format!("{} carries no normalization statistics", a.checkpoint.display())))?;
    probe_topk(&ckpt.params, ds, &norm, &a.ks, a.fill)
}

fn probe_cmd(a: ProbeArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let result = match checkpoint_precision(&a.checkpoint)? {
        4 => probe_with::<f32>(&a, &ds)?,
        _ => probe_with::<f64>(&a, &ds)?,
    };
    let out = a.out.clone().unwrap_or_else(|| a.checkpoint.with_file_name("probe.csv"));
    result.write_csv(&out)?;
    print!("{}", result.to_csv());
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let deltas = compare_logs(&a.a, &a.b, &a.out)?;
    let n = deltas.len() as f64;
    let mean_e = deltas.iter().map(|d| d.ddp_e).sum::<f64>() / n;
    let mean_h = deltas.iter().map(|d| d.ddp_h).sum::<f64>() / n;
    println!("{} shared epochs  mean ddp_e delta {mean_e:.6}  mean ddp_h delta {mean_h:.6}", deltas.len());
    Ok(())
}
