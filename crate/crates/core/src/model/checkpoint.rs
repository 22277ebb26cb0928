//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DCVW" | version: u8 | config: 8 x u32 | record count
//! record: path length | path (UTF-8) | dtype: u8 (4 = f32, 8 = f64) | rank | dims... | values
//! ```
//!
//! Config order: image_size, patch_size, channels, dim, depth, heads,
//! mlp_ratio, n_classes. Records under `data.` carry the input
//! normalization statistics.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelParams, VitConfig};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DCVW";
const VERSION: u8 = 1;
const NORM_MEAN: &str = "data.norm_mean";
const NORM_STD: &str = "data.norm_std";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub normalizer: Option<Normalizer>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record<T: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    out.push(T::TAG);
    put_u32(out, t.shape().len())?;
    for &d in t.shape() {
        put_u32(out, d)?;
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

pub fn encode_checkpoint<T: Element>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let cfg = ckpt.params.config();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(VERSION);
    for v in [cfg.image_size, cfg.patch_size, cfg.channels, cfg.dim, cfg.depth, cfg.heads, cfg.mlp_ratio, cfg.n_classes]
    {
        put_u32(&mut out, v)?;
    }
    let extra = if ckpt.normalizer.is_some() { 2 } else { 0 };
    put_u32(&mut out, ckpt.params.iter().count() + extra)?;
    for (name, t) in ckpt.params.iter() {
        put_record(&mut out, name, t)?;
    }
    if let Some(norm) = &ckpt.normalizer {
        put_record(&mut out, NORM_MEAN, &Tensor::<f64>::new([norm.mean.len()], norm.mean.clone())?)?;
        put_record(&mut out, NORM_STD, &Tensor::<f64>::new([norm.std.len()], norm.std.clone())?)?;
    }
    Ok(out)
}

pub fn write_checkpoint<T: Element>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: (self.pos + n) as u64,
            actual: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

enum Record {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

fn read_tensor<T: Element>(r: &mut Reader<'_>, shape: Vec<usize>) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let raw = r.take(n.checked_mul(T::BYTES).ok_or_else(|| Error::invalid("tensor too large"))?)?;
    Tensor::new(shape, raw.chunks_exact(T::BYTES).map(T::read_le).collect())
}

fn decode(bytes: &[u8]) -> Result<(VitConfig, Vec<(String, Record)>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let mut f = [0usize; 8];
    for v in f.iter_mut() {
        *v = r.u32()?;
    }
    let config = VitConfig {
        image_size: f[0],
        patch_size: f[1],
        channels: f[2],
        dim: f[3],
        depth: f[4],
        heads: f[5],
        mlp_ratio: f[6],
        n_classes: f[7],
    };
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::invalid("checkpoint record path is not UTF-8"))?;
        let tag = r.u8()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let rec = match tag {
            4 => Record::F32(read_tensor(&mut r, shape)?),
            8 => Record::F64(read_tensor(&mut r, shape)?),
            other => return Err(Error::invalid(format!("unknown element tag {other} in record {name}"))),
        };
        records.push((name, rec));
    }
    if r.pos != bytes.len() {
        return Err(Error::invalid(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok((config, records))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Element tag (4 or 8) of the model parameters stored at `path`.
pub fn checkpoint_precision(path: impl AsRef<Path>) -> Result<u8> {
    let (_, records) = decode(&read_bytes(path.as_ref())?)?;
    records
        .iter()
        .find(|(name, _)| !name.starts_with("data."))
        .map(|(_, r)| match r {
            Record::F32(_) => 4,
            Record::F64(_) => 8,
        })
        .ok_or_else(|| Error::invalid("checkpoint holds no parameters"))
}

pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (config, records) = decode(bytes)?;
    let mut tensors = BTreeMap::new();
    let (mut mean, mut std) = (None, None);
    for (name, rec) in records {
        match (name.as_str(), rec) {
            (NORM_MEAN, Record::F64(t)) => mean = Some(t.into_data()),
            (NORM_STD, Record::F64(t)) => std = Some(t.into_data()),
            (_, Record::F32(t)) if T::TAG == 4 => {
                tensors.insert(name, t.cast());
            }
            (_, Record::F64(t)) if T::TAG == 8 => {
                tensors.insert(name, t.cast());
            }
            _ => return Err(Error::invalid(format!("record {name} has an unexpected element type"))),
        }
    }
    let normalizer = match (mean, std) {
        (Some(mean), Some(std)) => Some(Normalizer { mean, std }),
        (None, None) => None,
        _ => return Err(Error::invalid("checkpoint has partial normalization statistics")),
    };
    Ok(Checkpoint { params: ModelParams::from_tensors(config, tensors)?, normalizer })
}

pub fn read_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode_checkpoint(&read_bytes(path.as_ref())?)
}
