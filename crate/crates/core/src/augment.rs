//! MixUp, the α controllers that set its strength, and patch-aligned erasing
//! with label decay.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::StageBoundaries;
use crate::tensor::{Element, Tensor};

/// Lower clamp for the smoothed α; Beta(α, α) needs α > 0.
pub const ALPHA_MIN: f64 = 0.01;

pub const STATIC_T1_ALPHA: f64 = 0.05;
pub const STATIC_T2_ALPHA: f64 = 0.5;
pub const STATIC_T3_ALPHA: f64 = 0.8;

/// Draws the interpolation weight `λ ~ Beta(α, α)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("Beta parameter must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("Beta({alpha}, {alpha}): {e}")))?;
    let v: f64 = beta.sample(rng);
    if v.is_nan() {
        return Err(Error::NonFinite { op: "sample_lambda" });
    }
    Ok(v.clamp(0.0, 1.0))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(())
}

fn lerp<T: Element>(a: &Tensor<T>, b: &Tensor<T>, wa: f64, wb: f64, op: &'static str) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (wa, wb) = (T::of(wa), T::of(wb));
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| wa * x + wb * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Convex combination of two samples and their labels.
pub fn mixup<T: Element>(
    x_i: &Tensor<T>,
    y_i: &Tensor<T>,
    x_j: &Tensor<T>,
    y_j: &Tensor<T>,
    lambda: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_lambda(lambda)?;
    let x = lerp(x_i, x_j, lambda, 1.0 - lambda, "mixup")?;
    let y = lerp(y_i, y_j, lambda, 1.0 - lambda, "mixup")?;
    Ok((x, y))
}

/// Target α from the previous step's easy and hard proportions.
pub fn dynamic_alpha(ddp_e: f64, ddp_h: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ddp_e) || !(0.0..=1.0).contains(&ddp_h) {
        return Err(Error::invalid(format!("proportions must lie in [0, 1], got ({ddp_e}, {ddp_h})")));
    }
    Ok(0.5 * (ddp_e + (1.0 - ddp_h)))
}

/// Three-period α schedule: flat, then half-cosine growth, then linear growth.
pub fn static_alpha(t: f64, b: &StageBoundaries) -> Result<f64> {
    let total = b.total as f64;
    if !(0.0..=total).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside schedule [0, {total}]")));
    }
    let (t1, t2) = (b.t1_end as f64, b.t2_end as f64);
    if t <= t1 {
        return Ok(STATIC_T1_ALPHA);
    }
    if t <= t2 {
        let s = (t - t1) / (t2 - t1);
        return Ok(blend(STATIC_T1_ALPHA, STATIC_T2_ALPHA, (1.0 - (std::f64::consts::PI * s).cos()) / 2.0));
    }
    Ok(blend(STATIC_T2_ALPHA, STATIC_T3_ALPHA, (t - t2) / (total - t2)))
}

// Exact at both ends: w = 0 gives a, w = 1 gives b.
fn blend(a: f64, b: f64, w: f64) -> f64 {
    (1.0 - w) * a + w * b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaMode {
    Dynamic { tau: f64 },
    Static { boundaries: StageBoundaries },
    Fixed { alpha: f64 },
}

/// Mutable α state owned by the training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaController {
    pub mode: AlphaMode,
    pub alpha_bar: f64,
}

impl AlphaController {
    pub fn dynamic(tau: f64, alpha_init: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must be in [0, 1], got {tau}")));
        }
        if !(alpha_init > 0.0 && alpha_init <= 1.0) {
            return Err(Error::invalid(format!("initial alpha must be in (0, 1], got {alpha_init}")));
        }
        Ok(AlphaController { mode: AlphaMode::Dynamic { tau }, alpha_bar: alpha_init })
    }

    pub fn static_schedule(boundaries: StageBoundaries) -> Self {
        AlphaController { mode: AlphaMode::Static { boundaries }, alpha_bar: STATIC_T1_ALPHA }
    }

    pub fn fixed(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("fixed alpha must be positive, got {alpha}")));
        }
        Ok(AlphaController { mode: AlphaMode::Fixed { alpha }, alpha_bar: alpha })
    }

    /// Exponential moving average update, clamped to `[ALPHA_MIN, 1]`.
    pub fn ema_step(&mut self, alpha_t: f64) -> Result<f64> {
        let AlphaMode::Dynamic { tau } = self.mode else {
            return Err(Error::invalid("ema_step requires a dynamic controller"));
        };
        if !alpha_t.is_finite() {
            return Err(Error::NonFinite { op: "ema_step" });
        }
        self.alpha_bar = (tau * self.alpha_bar + (1.0 - tau) * alpha_t).clamp(ALPHA_MIN, 1.0);
        Ok(self.alpha_bar)
    }

    /// Advances the controller for one mini-batch and returns the α to use.
    ///
    /// `ddp` is the previous model's (easy, hard) proportion on this batch;
    /// `t` is the fractional epoch position.
    pub fn advance(&mut self, ddp: (f64, f64), t: f64) -> Result<f64> {
        match &self.mode {
            AlphaMode::Dynamic { .. } => {
                let target = dynamic_alpha(ddp.0, ddp.1)?;
                self.ema_step(target)
            }
            AlphaMode::Static { boundaries } => {
                self.alpha_bar = static_alpha(t, boundaries)?;
                Ok(self.alpha_bar)
            }
            AlphaMode::Fixed { alpha } => {
                self.alpha_bar = *alpha;
                Ok(self.alpha_bar)
            }
        }
    }
}

/// Number of patches erased at rate `gamma`, rounding half up.
pub fn erase_count(gamma: f64, n_patches: usize) -> usize {
    ((gamma * n_patches as f64 + 0.5).floor() as usize).min(n_patches)
}

fn patch_grid(shape: &[usize], patch_size: usize) -> Result<(usize, usize, usize, usize)> {
    let [c, h, w] = *shape else {
        return Err(Error::shape("patch_erase", format!("image must be [C, H, W], got {shape:?}")));
    };
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::shape("patch_erase", format!("{h}x{w} image is not divisible into {patch_size}px patches")));
    }
    Ok((c, h, w, w / patch_size))
}

/// Fills the listed patches (row-major patch indices) of a `[C, H, W]` image.
pub fn fill_patches<T: Element>(x: &Tensor<T>, patches: &[usize], patch_size: usize, fill: T) -> Result<Tensor<T>> {
    let (c, h, w, cols) = patch_grid(x.shape(), patch_size)?;
    let n = (h / patch_size) * cols;
    let mut data = x.data().to_vec();
    for &p in patches {
        if p >= n {
            return Err(Error::invalid(format!("patch {p} out of range for {n} patches")));
        }
        let (pr, pc) = (p / cols, p % cols);
        for ch in 0..c {
            for r in pr * patch_size..(pr + 1) * patch_size {
                let row = (ch * h + r) * w;
                data[row + pc * patch_size..row + (pc + 1) * patch_size].fill(fill);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Erases `round(gamma * n_patches)` distinct patches chosen uniformly
/// without replacement. Returns the erased indices in ascending order.
pub fn patch_erase<T: Element, R: Rng + ?Sized>(
    x: &Tensor<T>,
    gamma: f64,
    patch_size: usize,
    fill: T,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (_, h, _, cols) = patch_grid(x.shape(), patch_size)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("erase rate must be in [0, 1], got {gamma}")));
    }
    let n = (h / patch_size) * cols;
    let mut chosen = index::sample(rng, n, erase_count(gamma, n)).into_vec();
    chosen.sort_unstable();
    let out = fill_patches(x, &chosen, patch_size, fill)?;
    Ok((out, chosen))
}

pub fn sample_gamma<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> f64 {
    rng.gen_range(0.0..=mu)
}

/// Uniform random cyclic permutation (Sattolo); no index maps to itself
/// when `n >= 2`.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Erases one random rectangle covering 2% to 33% of a `[C, H, W]` image
/// with aspect ratio in `[0.3, 3.3]`, applied with probability `prob`.
/// Returns the erased area fraction.
pub fn random_erase<T: Element, R: Rng + ?Sized>(x: &mut Tensor<T>, prob: f64, fill: T, rng: &mut R) -> Result<f64> {
    let [c, h, w] = *x.shape() else {
        return Err(Error::shape("random_erase", format!("image must be [C, H, W], got {:?}", x.shape())));
    };
    if !rng.gen_bool(prob.clamp(0.0, 1.0)) {
        return Ok(0.0);
    }
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target = rng.gen_range(0.02..(1.0 / 3.0)) * area;
        let ratio = rng.gen_range(0.3f64.ln()..3.3f64.ln()).exp();
        let eh = (target * ratio).sqrt().round() as usize;
        let ew = (target / ratio).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        let (top, left) = (rng.gen_range(0..=h - eh), rng.gen_range(0..=w - ew));
        let mut data = std::mem::replace(x, Tensor::zeros([1])).into_data();
        for ch in 0..c {
            for r in top..top + eh {
                let row = (ch * h + r) * w;
                data[row + left..row + left + ew].fill(fill);
            }
        }
        *x = Tensor::new([c, h, w], data)?;
        return Ok((eh * ew) as f64 / area);
    }
    Ok(0.0)
}

/// Parameters of one erased-and-mixed pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErasePlan {
    pub lambda: f64,
    pub gamma_i: f64,
    pub gamma_j: f64,
    pub mu: f64,
    pub epsilon_i: f64,
    pub epsilon_j: f64,
    pub erased_i: Vec<usize>,
    pub erased_j: Vec<usize>,
}

impl ErasePlan {
    /// Coefficients applied to `y_i` and `y_j`.
    pub fn label_coefficients(&self) -> (f64, f64) {
        (self.lambda - self.epsilon_i, 1.0 - self.lambda - self.epsilon_j)
    }
}

/// Decay factors `(ε_i, ε_j) = (λγ_i/μ, (1-λ)γ_j/μ)`.
pub fn decay_factors(lambda: f64, gamma_i: f64, gamma_j: f64, mu: f64) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::invalid(format!("mu must be in (0, 1], got {mu}")));
    }
    for g in [gamma_i, gamma_j] {
        if !(0.0..=mu).contains(&g) {
            return Err(Error::invalid(format!("erase rate {g} outside [0, mu = {mu}]")));
        }
    }
    Ok((lambda / mu * gamma_i, (1.0 - lambda) / mu * gamma_j))
}

/// Mixes two independently patch-erased images and decays each label by
/// the fraction of its image that was erased. Label mass is not renormalized.
#[allow(clippy::too_many_arguments)]
pub fn patch_erasing_mix<T: Element, R: Rng + ?Sized>(
    x_i: &Tensor<T>,
    y_i: &Tensor<T>,
    x_j: &Tensor<T>,
    y_j: &Tensor<T>,
    lambda: f64,
    gamma_i: f64,
    gamma_j: f64,
    mu: f64,
    patch_size: usize,
    fill: T,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>, ErasePlan)> {
    let (epsilon_i, epsilon_j) = decay_factors(lambda, gamma_i, gamma_j, mu)?;
    let (ei, erased_i) = patch_erase(x_i, gamma_i, patch_size, fill, rng)?;
    let (ej, erased_j) = patch_erase(x_j, gamma_j, patch_size, fill, rng)?;
    let x = lerp(&ei, &ej, lambda, 1.0 - lambda, "patch_erasing_mix")?;
    let plan = ErasePlan { lambda, gamma_i, gamma_j, mu, epsilon_i, epsilon_j, erased_i, erased_j };
    let (ci, cj) = plan.label_coefficients();
    let y = lerp(y_i, y_j, ci, cj, "patch_erasing_mix")?;
    Ok((x, y, plan))
}
