//! Labeled 8-bit image datasets: a procedural generator, the `DCV1` file
//! format, input normalization and epoch batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DATASET_MAGIC: [u8; 4] = *b"DCV1";
const HEADER_BYTES: u64 = 4 + 5 * 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub labels: Vec<u16>,
    /// `(sample, channel, row, col)` order.
    pub pixels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        n_classes: usize,
        labels: Vec<u16>,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("dataset needs at least one sample and positive image extents"));
        }
        if pixels.len() != n * channels * height * width {
            return Err(Error::invalid(format!(
                "{} pixels for {n} samples of {channels}x{height}x{width}",
                pixels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= n_classes) {
            return Err(Error::Label { index, label: label as u32, n_classes: n_classes as u32 });
        }
        Ok(Dataset { n, channels, height, width, n_classes, labels, pixels })
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let s = self.sample_len();
        &self.pixels[i * s..(i + 1) * s]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Normalized images `[len, C, H, W]` for the given sample indices.
    pub fn images<T: Element>(&self, indices: &[usize], norm: &Normalizer) -> Result<Tensor<T>> {
        if norm.mean.len() != self.channels {
            return Err(Error::invalid(format!(
                "normalizer has {} channels, dataset has {}",
                norm.mean.len(),
                self.channels
            )));
        }
        let plane = self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            for (c, chan) in self.image(i).chunks_exact(plane).enumerate() {
                let (m, s) = (norm.mean[c], norm.std[c]);
                data.extend(chan.iter().map(|&p| T::of((p as f64 / 255.0 - m) / s)));
            }
        }
        Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
    }

    /// One-hot targets `[len, n_classes]`.
    pub fn one_hot<T: Element>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let c = self.n_classes;
        let mut data = vec![T::zero(); indices.len() * c];
        for (row, &i) in indices.iter().enumerate() {
            data[row * c + self.label(i)] = T::one();
        }
        Tensor::new(vec![indices.len(), c], data)
    }
}

/// Per-channel statistics of `pixel / 255`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Self {
        let plane = ds.height * ds.width;
        let count = (ds.n * plane) as f64;
        let mut sum = vec![0.0f64; ds.channels];
        let mut sq = vec![0.0f64; ds.channels];
        for i in 0..ds.n {
            for (c, chan) in ds.image(i).chunks_exact(plane).enumerate() {
                for &p in chan {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / count - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, std }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{what} = {v} does not fit a u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_BYTES as usize + ds.n * 2 + ds.pixels.len());
    out.extend_from_slice(&DATASET_MAGIC);
    put_u32(&mut out, ds.n, "n")?;
    put_u32(&mut out, ds.height, "height")?;
    put_u32(&mut out, ds.width, "width")?;
    put_u32(&mut out, ds.channels, "channels")?;
    put_u32(&mut out, ds.n_classes, "n_classes")?;
    for &l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend_from_slice(&ds.pixels);
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let actual = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: HEADER_BYTES, actual });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: DATASET_MAGIC, found: magic });
    }
    if actual < HEADER_BYTES {
        return Err(Error::Truncated { expected: HEADER_BYTES, actual });
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as u64;
    let (n, h, w, c, classes) = (field(0), field(1), field(2), field(3), field(4));
    let expected = HEADER_BYTES + n * 2 + n * c * h * w;
    if actual != expected {
        return Err(Error::Truncated { expected, actual });
    }
    let label_end = HEADER_BYTES as usize + 2 * n as usize;
    let labels: Vec<u16> = bytes[HEADER_BYTES as usize..label_end]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    Dataset::new(c as usize, h as usize, w as usize, classes as usize, labels, bytes[label_end..].to_vec())
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    decode_dataset(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk,
    Square,
    Cross,
    Ring,
    Triangle,
    HBars,
    Saltire,
    VBars,
}

const SHAPES: [Shape; 8] =
    [Shape::Disk, Shape::Square, Shape::Cross, Shape::Ring, Shape::Triangle, Shape::HBars, Shape::Saltire, Shape::VBars];

const PALETTE: [[f64; 3]; 5] = [
    [230.0, 60.0, 50.0],
    [40.0, 170.0, 230.0],
    [240.0, 210.0, 40.0],
    [70.0, 200.0, 90.0],
    [200.0, 80.0, 220.0],
];

impl Shape {
    /// Whether offset `(dx, dy)` (in units of the shape radius) is inside.
    fn contains(self, dx: f64, dy: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        let inside = ax.max(ay) < 1.0;
        let r = (dx * dx + dy * dy).sqrt();
        match self {
            Shape::Disk => r < 1.0,
            Shape::Square => ax.max(ay) < 0.8,
            Shape::Cross => inside && (ax < 0.3 || ay < 0.3),
            Shape::Ring => r < 1.0 && r > 0.55,
            Shape::Triangle => dy > -0.9 && dy < 0.9 && ax < (dy + 0.9) * 0.55,
            Shape::HBars => inside && ((dy + 1.0) * 2.5).floor() as i64 % 2 == 0,
            Shape::Saltire => inside && ((dx - dy).abs() < 0.35 || (dx + dy).abs() < 0.35),
            Shape::VBars => inside && ((dx + 1.0) * 2.5).floor() as i64 % 2 == 0,
        }
    }
}

/// Fixed appearance of one class: a colored shape at a class-specific spot.
#[derive(Clone, Copy, Debug)]
struct Template {
    shape: Shape,
    color: [f64; 3],
    cx: f64,
    cy: f64,
    radius: f64,
}

impl Template {
    fn for_class(c: usize, size: usize) -> Self {
        let s = size as f64;
        let angle = c as f64 * 2.399_963; // golden angle spreads centers
        let spread = 0.12 * s;
        Template {
            shape: SHAPES[c % SHAPES.len()],
            color: PALETTE[(c + c / SHAPES.len()) % PALETTE.len()],
            cx: s / 2.0 + spread * angle.cos(),
            cy: s / 2.0 + spread * angle.sin(),
            radius: s * (0.24 + 0.02 * (c / SHAPES.len()) as f64),
        }
    }
}

fn background(ch: usize, row: usize, size: usize) -> f64 {
    let shade = 20.0 * (row as f64 / size as f64 - 0.5);
    [100.0, 105.0, 95.0][ch % 3] + shade
}

/// Renders `t` over the background; `opacity` scales the shape's contrast.
fn render(t: &Template, channels: usize, size: usize, shift: (f64, f64), opacity: f64, canvas: &mut [f64]) {
    for row in 0..size {
        for col in 0..size {
            let dx = (col as f64 + 0.5 - t.cx - shift.0) / t.radius;
            let dy = (row as f64 + 0.5 - t.cy - shift.1) / t.radius;
            if !t.shape.contains(dx, dy) {
                continue;
            }
            for ch in 0..channels {
                let idx = (ch * size + row) * size + col;
                let color = t.color[ch % 3];
                canvas[idx] += opacity * (color - canvas[idx]);
            }
        }
    }
}

/// Difficulty noise of the default desk-scale dataset.
pub const DEFAULT_NOISE: f64 = 1.0;

/// Deterministic synthetic dataset: `classes` shape templates, each sample
/// perturbed in proportion to `difficulty_noise` times a per-sample scale
/// drawn uniformly from `[0, 1]`. Labels cycle through the classes.
///
/// Perturbations: contrast fade, sub-pattern shift, a translucent distractor
/// shape from another class and Gaussian pixel noise.
pub fn gen_synthetic(n: usize, classes: usize, image_size: usize, difficulty_noise: f64, seed: u64) -> Result<Dataset> {
    gen_synthetic_channels(n, classes, image_size, 3, difficulty_noise, seed)
}

pub fn gen_synthetic_channels(
    n: usize,
    classes: usize,
    image_size: usize,
    channels: usize,
    difficulty_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || classes > u16::MAX as usize {
        return Err(Error::invalid(format!("need between 2 and 65535 classes, got {classes}")));
    }
    if n == 0 || image_size < 4 || channels == 0 {
        return Err(Error::invalid(format!("invalid sizes: n={n}, image_size={image_size}, channels={channels}")));
    }
    if !(difficulty_noise >= 0.0 && difficulty_noise.is_finite()) {
        return Err(Error::invalid(format!("difficulty noise must be non-negative, got {difficulty_noise}")));
    }
    let templates: Vec<Template> = (0..classes).map(|c| Template::for_class(c, image_size)).collect();
    let mut base = vec![0.0; channels * image_size * image_size];
    for ch in 0..channels {
        for row in 0..image_size {
            let v = background(ch, row, image_size);
            base[(ch * image_size + row) * image_size..(ch * image_size + row + 1) * image_size].fill(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * base.len());
    let size = image_size as f64;
    for i in 0..n {
        let label = i % classes;
        let a = difficulty_noise * rng.gen_range(0.0..=1.0f64);
        let mut canvas = base.clone();
        let shift = (a * 0.1 * size * rng.gen_range(-1.0..=1.0), a * 0.1 * size * rng.gen_range(-1.0..=1.0));
        let fade = (0.6 * a).min(0.9);
        render(&templates[label], channels, image_size, shift, 1.0 - fade, &mut canvas);
        let other = (label + rng.gen_range(1..classes)) % classes;
        let offset = (rng.gen_range(-0.3..=0.3) * size, rng.gen_range(-0.3..=0.3) * size);
        render(&templates[other], channels, image_size, offset, (0.7 * a).min(0.9), &mut canvas);
        let sigma = 50.0 * a;
        for v in canvas.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + sigma * z).round().clamp(0.0, 255.0);
        }
        labels.push(label as u16);
        pixels.extend(canvas.iter().map(|&v| v as u8));
    }
    Dataset::new(channels, image_size, image_size, classes, labels, pixels)
}

/// Noise-free rendering of every class, for template-matching checks.
pub fn class_templates(classes: usize, image_size: usize, channels: usize) -> Result<Dataset> {
    gen_synthetic_channels(classes, classes, image_size, channels, 0.0, 0)
}

/// Mixes a seed with extra words into an independent stream seed.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    words.iter().fold(splitmix(seed), |acc, &w| splitmix(acc ^ splitmix(w)))
}

/// Shuffled sample order for one epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch_seed: u64,
    pub batch_size: usize,
    pub order: Vec<usize>,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("cannot batch an empty dataset"));
        }
        if batch_size == 0 || batch_size > n {
            return Err(Error::invalid(format!("batch size {batch_size} must be in [1, {n}]")));
        }
        let epoch_seed = derive_seed(seed, &[0xBA7C, epoch as u64]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        Ok(BatchPlan { epoch_seed, batch_size, order })
    }

    /// Index slices of each batch; the final short batch is kept.
    pub fn chunks(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(self.batch_size)
    }

    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// A normalized mini-batch with one-hot targets.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub indices: Vec<usize>,
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub targets: Tensor<T>,
}

impl<T: Element> Batch<T> {
    pub fn gather(ds: &Dataset, indices: &[usize], norm: &Normalizer) -> Result<Self> {
        Ok(Batch {
            indices: indices.to_vec(),
            images: ds.images(indices, norm)?,
            labels: indices.iter().map(|&i| ds.label(i)).collect(),
            targets: ds.one_hot(indices)?,
        })
    }
}

/// All batches of one epoch, in a deterministic order per `(seed, epoch)`.
pub fn batches<'a, T: Element>(
    ds: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    norm: &'a Normalizer,
) -> Result<impl Iterator<Item = Result<Batch<T>>> + 'a> {
    let plan = BatchPlan::new(ds.n, batch_size, seed, epoch)?;
    let chunks: Vec<Vec<usize>> = plan.chunks().map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |idx| Batch::gather(ds, &idx, norm)))
}
