//! Forward and backward kernels shared by eager tensors and the graph.

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

fn suffix_of(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Elementwise add; `b` may broadcast over the leading axes of `a`.
pub fn add_suffix<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if !suffix_of(a.shape(), b.shape()) {
        return Err(Error::shape("add", format!("{:?} + {:?}", a.shape(), b.shape())));
    }
    let inner = b.len();
    let mut out = a.data().to_vec();
    for chunk in out.chunks_exact_mut(inner) {
        for (o, &v) in chunk.iter_mut().zip(b.data()) {
            *o += v;
        }
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

/// Reduces `g` (shaped like the broadcast result) back to a suffix shape.
pub fn sum_to_suffix<T: Element>(g: &Tensor<T>, suffix: &[usize]) -> Tensor<T> {
    let inner: usize = suffix.iter().product();
    let mut out = vec![T::zero(); inner];
    for chunk in g.data().chunks_exact(inner) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(suffix.to_vec(), out)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mul", format!("{:?} * {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Resolved geometry of a (possibly batched) matrix product.
#[derive(Clone, Copy, Debug)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `b` is a single matrix shared by every batch entry.
    pub shared_rhs: bool,
}

pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    let bad = || Error::shape("matmul", format!("{a:?} @ {b:?}"));
    if a.len() < 2 || b.len() < 2 {
        return Err(bad());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(bad());
    }
    if b.len() == 2 {
        // Fold every leading axis of `a` into the row count.
        let rows: usize = a[..a.len() - 1].iter().product();
        return Ok(MatmulDims { batch: 1, m: rows, k, n, shared_rhs: true });
    }
    if a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(bad());
    }
    let batch = a[..a.len() - 2].iter().product();
    Ok(MatmulDims { batch, m, k, n, shared_rhs: false })
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let d = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); d.batch * d.m * d.n];
    for i in 0..d.batch {
        let ab = &a.data()[i * d.m * d.k..(i + 1) * d.m * d.k];
        let bb = if d.shared_rhs { b.data() } else { &b.data()[i * d.k * d.n..(i + 1) * d.k * d.n] };
        let cb = &mut out[i * d.m * d.n..(i + 1) * d.m * d.n];
        T::gemm(
            d.m, d.k, d.n, T::one(), ab, d.k as isize, 1, bb, d.n as isize, 1, T::zero(), cb, d.n as isize, 1,
        );
    }
    let mut shape = a.shape()[..a.shape().len() - 1].to_vec();
    shape.push(d.n);
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients of `a @ b` given the upstream gradient `g`.
pub fn matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let d = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
    let (m, k, n) = (d.m, d.k, d.n);
    let mut ga = need_a.then(|| vec![T::zero(); a.len()]);
    let mut gb = need_b.then(|| vec![T::zero(); b.len()]);
    for i in 0..d.batch {
        let ab = &a.data()[i * m * k..(i + 1) * m * k];
        let bo = if d.shared_rhs { 0 } else { i * k * n };
        let bb = &b.data()[bo..bo + k * n];
        let gg = &g.data()[i * m * n..(i + 1) * m * n];
        if let Some(ga) = ga.as_mut() {
            // dA = G @ B^T
            let c = &mut ga[i * m * k..(i + 1) * m * k];
            T::gemm(m, n, k, T::one(), gg, n as isize, 1, bb, 1, n as isize, T::zero(), c, k as isize, 1);
        }
        if let Some(gb) = gb.as_mut() {
            // dB = A^T @ G, accumulated across the batch when B is shared.
            let c = &mut gb[bo..bo + k * n];
            T::gemm(k, m, n, T::one(), ab, 1, k as isize, gg, n as isize, 1, T::one(), c, n as isize, 1);
        }
    }
    (
        ga.map(|v| Tensor::from_parts(a.shape().to_vec(), v)),
        gb.map(|v| Tensor::from_parts(b.shape().to_vec(), v)),
    )
}

pub fn permute<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.shape().len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape("permute", format!("axes {axes:?} for shape {:?}", x.shape())));
    }
    let src_shape = x.shape();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * src_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| src_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let total = x.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let (inner_n, inner_stride) = (out_shape[last], strides[last]);
    let mut base = 0usize;
    let data = x.data();
    while out.len() < total {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner_n]);
        } else {
            out.extend((0..inner_n).map(|j| data[base + j * inner_stride]));
        }
        // Odometer increment over the outer axes.
        let mut ax = last;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn last_dim<T: Element>(x: &Tensor<T>) -> usize {
    *x.shape().last().expect("rank >= 1")
}

pub fn softmax_last<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let c = last_dim(x);
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp_fast();
        }
        let z: T = row.iter().copied().sum();
        let inv = T::one() / z;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub fn softmax_backward<T: Element>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = last_dim(y);
    let mut out = vec![T::zero(); y.len()];
    for ((o, yr), gr) in out.chunks_exact_mut(c).zip(y.data().chunks_exact(c)).zip(g.data().chunks_exact(c)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

pub fn log_softmax_last<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let c = last_dim(x);
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub fn log_softmax_backward<T: Element>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = last_dim(y);
    let mut out = vec![T::zero(); y.len()];
    for ((o, yr), gr) in out.chunks_exact_mut(c).zip(y.data().chunks_exact(c)).zip(g.data().chunks_exact(c)) {
        let gsum: T = gr.iter().copied().sum();
        for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *o = gv - yv.exp() * gsum;
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

// tanh approximation of GELU
struct GeluConsts<T> {
    c: T,
    k: T,
    k3: T,
    half: T,
}

impl<T: Element> GeluConsts<T> {
    fn new() -> Self {
        let k = 0.044715;
        GeluConsts { c: T::of((2.0 / std::f64::consts::PI).sqrt()), k: T::of(k), k3: T::of(3.0 * k), half: T::of(0.5) }
    }
}

pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let GeluConsts { c, k, half, .. } = GeluConsts::<T>::new();
    let data = x.data().iter().map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh_fast())).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub fn gelu_backward<T: Element>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let GeluConsts { c, k, k3, half } = GeluConsts::<T>::new();
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&x, &gv)| {
            let th = (c * (x + k * x * x * x)).tanh_fast();
            let dinner = c * (T::one() + k3 * x * x);
            (half * (T::one() + th) + half * x * (T::one() - th * th) * dinner) * gv
        })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Layer normalization over the last axis. Returns the output together with
/// the normalized input and per-row reciprocal standard deviation.
pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let d = last_dim(x);
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(
            "layer_norm",
            format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let dn = T::of(d as f64);
    let eps = T::of(LN_EPS);
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), out), xhat, rstd))
}

pub fn layer_norm_backward<T: Element>(
    g: &Tensor<T>,
    gamma: &Tensor<T>,
    xhat: &[T],
    rstd: &[T],
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = gamma.len();
    let rows = rstd.len();
    let dn = T::of(d as f64);
    let mut gx = vec![T::zero(); g.len()];
    let mut ggamma = vec![T::zero(); d];
    let mut gbeta = vec![T::zero(); d];
    for r in 0..rows {
        let gr = &g.data()[r * d..(r + 1) * d];
        let hr = &xhat[r * d..(r + 1) * d];
        let mut mean_dh = T::zero();
        let mut mean_dh_h = T::zero();
        for j in 0..d {
            let dh = gr[j] * gamma.data()[j];
            mean_dh += dh;
            mean_dh_h += dh * hr[j];
            ggamma[j] += gr[j] * hr[j];
            gbeta[j] += gr[j];
        }
        mean_dh = mean_dh / dn;
        mean_dh_h = mean_dh_h / dn;
        for j in 0..d {
            let dh = gr[j] * gamma.data()[j];
            gx[r * d + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
        }
    }
    (
        Tensor::from_parts(g.shape().to_vec(), gx),
        Tensor::from_parts(vec![d], ggamma),
        Tensor::from_parts(vec![d], gbeta),
    )
}

/// Splits a shape at `axis` into (outer, axis extent, inner).
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::shape("concat", format!("axis {axis} for rank {rank}")));
    }
    for x in xs {
        let s = x.shape();
        if s.len() != rank || s[..axis] != first.shape()[..axis] || s[axis + 1..] != first.shape()[axis + 1..] {
            return Err(Error::shape("concat", format!("{:?} vs {:?} on axis {axis}", first.shape(), s)));
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let total_axis: usize = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for x in xs {
            let w = x.shape()[axis] * inner;
            out.extend_from_slice(&x.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if axis >= s.len() || len == 0 || start + len > s[axis] {
        return Err(Error::shape("slice", format!("[{start}, +{len}) on axis {axis} of {s:?}")));
    }
    let (outer, extent, inner) = split_at_axis(s, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = s.to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice_backward<T: Element>(
    g: &Tensor<T>,
    src_shape: &[usize],
    axis: usize,
    start: usize,
) -> Tensor<T> {
    let (outer, extent, inner) = split_at_axis(src_shape, axis);
    let len = g.shape()[axis];
    let mut out = vec![T::zero(); outer * extent * inner];
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(src_shape.to_vec(), out)
}
