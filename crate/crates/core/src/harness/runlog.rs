use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DdpRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub ddp_e: f64,
    pub ddp_h: f64,
    pub alpha_bar: f64,
    pub patch_erasing_active: bool,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRecord {
    /// 1-based index over the whole run.
    pub batch: usize,
    pub ddp_e: f64,
    pub ddp_h: f64,
    /// The α that parameterized this batch's λ draw.
    pub alpha_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Epoch(EpochRecord),
    Batch(BatchRecord),
}

/// Append-only training history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub lines: Vec<LogLine>,
}

fn finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl RunLog {
    pub fn new() -> Self {
        RunLog::default()
    }

    pub fn push_epoch(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.epochs().last() {
            if rec.epoch <= last.epoch {
                return Err(Error::invalid(format!("epoch {} does not follow epoch {}", rec.epoch, last.epoch)));
            }
        }
        let values = [rec.train_loss, rec.train_acc, rec.eval_acc, rec.ddp_e, rec.ddp_h, rec.alpha_bar, rec.wall_time];
        if !finite(&values) {
            return Err(Error::NonFinite { op: "run log epoch record" });
        }
        self.lines.push(LogLine::Epoch(rec));
        Ok(())
    }

    pub fn push_batch(&mut self, rec: BatchRecord) -> Result<()> {
        if !finite(&[rec.ddp_e, rec.ddp_h, rec.alpha_t]) {
            return Err(Error::NonFinite { op: "run log batch record" });
        }
        self.lines.push(LogLine::Batch(rec));
        Ok(())
    }

    pub fn epochs(&self) -> impl DoubleEndedIterator<Item = &EpochRecord> {
        self.lines.iter().filter_map(|l| match l {
            LogLine::Epoch(e) => Some(e),
            LogLine::Batch(_) => None,
        })
    }

    pub fn batches(&self) -> impl Iterator<Item = &BatchRecord> {
        self.lines.iter().filter_map(|l| match l {
            LogLine::Batch(b) => Some(b),
            LogLine::Epoch(_) => None,
        })
    }

    /// Per-epoch proportions, with `t` = epoch number.
    pub fn ddp_records(&self) -> Vec<DdpRecord> {
        self.epochs().map(|e| DdpRecord { t: e.epoch as f64, ddp_e: e.ddp_e, ddp_h: e.ddp_h }).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(&serde_json::to_string(line).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut log = RunLog::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
            if raw.trim().is_empty() {
                continue;
            }
            let line: LogLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            match line {
                LogLine::Epoch(e) => log.push_epoch(e),
                LogLine::Batch(b) => log.push_batch(b),
            }
            .map_err(|e| err(e.to_string()))?;
        }
        Ok(log)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunLog::parse(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Appends records to a JSON-lines file as they are produced.
pub struct RunLogWriter {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl RunLogWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunLogWriter { file: std::io::BufWriter::new(file), path })
    }

    pub fn append(&mut self, lines: &[LogLine]) -> Result<()> {
        for line in lines {
            let text = serde_json::to_string(line).expect("records serialize");
            writeln!(self.file, "{text}").map_err(|e| Error::io(&self.path, e))?;
        }
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
