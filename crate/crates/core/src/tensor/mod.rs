//! Dense row-major tensors and a tape-based reverse-mode autodiff graph.
//!
//! Tensors are plain immutable values. Differentiable computation happens
//! on a [`Graph`], which records every op together with the activations its
//! backward pass needs.

mod graph;
mod gradcheck;
pub(crate) mod kernels;

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

pub use graph::{Gradients, Graph, Var};
pub use gradcheck::{grad_check, Differentiable};

/// Scalar element type of a tensor: `f32` for training, `f64` for metrics.
pub trait Element:
    Float + Debug + Default + Send + Sync + std::iter::Sum + std::ops::AddAssign + 'static
{
    const BYTES: usize;
    /// Type tag written into checkpoints.
    const TAG: u8;

    /// `c = alpha * a @ b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 converts to every float element")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("float element converts to f64")
    }

    /// `exp` for bulk kernels; may trade the last ulp or two for a
    /// branch-free body the compiler can vectorize.
    fn exp_fast(self) -> Self {
        self.exp()
    }

    /// `tanh` for bulk kernels, with the same trade-off as `exp_fast`.
    fn tanh_fast(self) -> Self {
        self.tanh()
    }

    /// True iff every value is finite, without an early exit.
    fn all_finite(values: &[Self]) -> bool {
        let mut acc = [Self::zero(); 8];
        let mut chunks = values.chunks_exact(8);
        for c in &mut chunks {
            for (a, &v) in acc.iter_mut().zip(c) {
                *a += v * Self::zero();
            }
        }
        let tail = chunks.remainder().iter().fold(Self::zero(), |a, &v| a + v * Self::zero());
        acc.iter().fold(tail, |a, &b| a + b) == Self::zero()
    }
}

/// Cody-Waite reduction to `[-ln2/2, ln2/2]` and a degree-6 polynomial
/// (Cephes coefficients); about 1 ulp over the clamped range.
#[inline(always)]
fn expf_poly(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0; // 1.5 * 2^23 rounds to nearest integer
    let xc = x.clamp(-87.3, 88.0);
    let t = xc * std::f32::consts::LOG2_E + MAGIC;
    let n = t - MAGIC;
    let r = xc - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5e-1;
    let y = p * r * r + r + 1.0;
    let bits = (t.to_bits() as i32).wrapping_sub(MAGIC.to_bits() as i32).wrapping_add(127).wrapping_shl(23);
    let y = y * f32::from_bits(bits as u32);
    if x.is_nan() {
        x
    } else {
        y
    }
}

impl Element for f32 {
    const BYTES: usize = 4;
    const TAG: u8 = 4;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices sized for the given extents and strides.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    #[inline(always)]
    fn exp_fast(self) -> f32 {
        expf_poly(self)
    }

    #[inline(always)]
    fn tanh_fast(self) -> f32 {
        let e = expf_poly(-2.0 * self.abs());
        ((1.0 - e) / (1.0 + e)).copysign(self)
    }
}

impl Element for f64 {
    const BYTES: usize = 8;
    const TAG: u8 = 8;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices sized for the given extents and strides.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// An n-dimensional array stored contiguously in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); len], requires_grad: false }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor { shape, data: vec![value; len], requires_grad: false }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    /// Marks this tensor as a trainable leaf when it enters a [`Graph`].
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let t = Tensor::new(shape, self.data.clone())?;
        Ok(Tensor { requires_grad: self.requires_grad, ..t })
    }

    pub fn all_finite(&self) -> bool {
        T::all_finite(&self.data)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data, requires_grad: false }
    }

    pub(crate) fn checked(self, op: &'static str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        kernels::add_suffix(self, other)?.checked("add")
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        kernels::mul(self, other)?.checked("mul")
    }

    pub fn scale(&self, k: T) -> Result<Self> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| v * k).collect())
            .checked("scale")
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        kernels::matmul(self, other)?.checked("matmul")
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        kernels::permute(self, axes)
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Self> {
        let mut axes: Vec<usize> = (0..self.shape.len()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(Error::shape("transpose", format!("axes ({a}, {b}) for rank {}", axes.len())));
        }
        axes.swap(a, b);
        kernels::permute(self, &axes)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn softmax(&self) -> Result<Self> {
        kernels::softmax_last(self).checked("softmax")
    }

    pub fn log_softmax(&self) -> Result<Self> {
        kernels::log_softmax_last(self).checked("log_softmax")
    }

    pub fn gelu(&self) -> Result<Self> {
        kernels::gelu(self).checked("gelu")
    }

    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Self> {
        kernels::layer_norm(self, gamma, beta)?.0.checked("layer_norm")
    }
}
