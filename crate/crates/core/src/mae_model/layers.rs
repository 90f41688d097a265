//! Transformer building blocks with explicit forward caches and backward passes.
//!
//! Parameters live in one flat buffer addressed by [`Slot`]s; gradients are
//! accumulated into a buffer with the same layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

use crate::scalar::Scalar;

pub(crate) const LN_EPS: f64 = 1e-6;

/// Location of one parameter tensor inside the flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub(crate) fn mat<'a, T>(&self, buf: &'a [T]) -> ArrayView2<'a, T> {
        ArrayView2::from_shape((self.rows, self.cols), &buf[self.range()]).expect("slot shape")
    }

    pub(crate) fn vec<'a, T>(&self, buf: &'a [T]) -> ArrayView1<'a, T> {
        ArrayView1::from(&buf[self.range()])
    }

    pub(crate) fn mat_mut<'a, T>(&self, buf: &'a mut [T]) -> ArrayViewMut2<'a, T> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut buf[self.range()])
            .expect("slot shape")
    }

    pub(crate) fn vec_mut<'a, T>(&self, buf: &'a mut [T]) -> ArrayViewMut1<'a, T> {
        ArrayViewMut1::from(&mut buf[self.range()])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearSlots {
    pub weight: Slot,
    pub bias: Slot,
}

#[derive(Clone, Copy, Debug)]
pub struct NormSlots {
    pub gamma: Slot,
    pub beta: Slot,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockSlots {
    pub norm1: NormSlots,
    pub qkv: LinearSlots,
    pub proj: LinearSlots,
    pub norm2: NormSlots,
    pub fc1: LinearSlots,
    pub fc2: LinearSlots,
}

pub(crate) fn linear<T: Scalar>(x: &ArrayView2<T>, p: &[T], lin: &LinearSlots) -> Array2<T> {
    let mut y = x.dot(&lin.weight.mat(p));
    y += &lin.bias.vec(p);
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub(crate) fn linear_backward<T: Scalar>(
    dy: &ArrayView2<T>,
    x: &ArrayView2<T>,
    p: &[T],
    g: &mut [T],
    lin: &LinearSlots,
) -> Array2<T> {
    general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut lin.weight.mat_mut(g));
    let mut db = lin.bias.vec_mut(g);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&lin.weight.mat(p).t())
}

pub(crate) struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &ArrayView2<T>,
    p: &[T],
    n: &NormSlots,
) -> (Array2<T>, NormCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *inv = T::one() / (var + eps).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * &n.gamma.vec(p);
    y += &n.beta.vec(p);
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &ArrayView2<T>,
    cache: &NormCache<T>,
    p: &[T],
    g: &mut [T],
    n: &NormSlots,
) -> Array2<T> {
    {
        let mut dgamma = n.gamma.vec_mut(g);
        dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut dbeta = n.beta.vec_mut(g);
        dbeta += &dy.sum_axis(Axis(0));
    }
    let d = T::of(dy.ncols() as f64);
    let mut dx = dy * &n.gamma.vec(p);
    for ((mut row, xhat), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        Zip::from(&mut row)
            .and(&xhat)
            .for_each(|v, &xh| *v = inv * (*v - mean_d - xh * mean_dx));
    }
    dx
}

pub(crate) struct AttnCache<T> {
    input: Array2<T>,
    qkv: Array2<T>,
    probs: Vec<Array2<T>>,
    context: Array2<T>,
}

fn softmax_rows<T: Scalar>(m: &mut Array2<T>) {
    for mut row in m.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Multi-head self-attention with a fused QKV projection.
pub(crate) fn attention<T: Scalar>(
    x: Array2<T>,
    p: &[T],
    qkv_slots: &LinearSlots,
    proj: &LinearSlots,
    heads: usize,
) -> (Array2<T>, AttnCache<T>) {
    let (n, d) = x.dim();
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let qkv = linear(&x.view(), p, qkv_slots);
    let mut context = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let c = h * dh;
        let q = qkv.slice(s![.., c..c + dh]);
        let k = qkv.slice(s![.., d + c..d + c + dh]);
        let v = qkv.slice(s![.., 2 * d + c..2 * d + c + dh]);
        let mut scores = q.dot(&k.t());
        scores *= scale;
        softmax_rows(&mut scores);
        context.slice_mut(s![.., c..c + dh]).assign(&scores.dot(&v));
        probs.push(scores);
    }
    let out = linear(&context.view(), p, proj);
    (
        out,
        AttnCache {
            input: x,
            qkv,
            probs,
            context,
        },
    )
}

pub(crate) fn attention_backward<T: Scalar>(
    dout: &ArrayView2<T>,
    cache: &AttnCache<T>,
    p: &[T],
    g: &mut [T],
    qkv_slots: &LinearSlots,
    proj: &LinearSlots,
    heads: usize,
) -> Array2<T> {
    let (n, d) = cache.input.dim();
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let dcontext = linear_backward(dout, &cache.context.view(), p, g, proj);
    let mut dqkv = Array2::zeros((n, 3 * d));
    for (h, probs) in cache.probs.iter().enumerate() {
        let c = h * dh;
        let q = cache.qkv.slice(s![.., c..c + dh]);
        let k = cache.qkv.slice(s![.., d + c..d + c + dh]);
        let v = cache.qkv.slice(s![.., 2 * d + c..2 * d + c + dh]);
        let dctx = dcontext.slice(s![.., c..c + dh]);

        let mut ds = dctx.dot(&v.t());
        dqkv.slice_mut(s![.., 2 * d + c..2 * d + c + dh])
            .assign(&probs.t().dot(&dctx));
        // softmax Jacobian, row by row
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
            let dot = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum::<T>();
            Zip::from(&mut drow)
                .and(&prow)
                .for_each(|dv, &pv| *dv = pv * (*dv - dot) * scale);
        }
        dqkv.slice_mut(s![.., c..c + dh]).assign(&ds.dot(&k));
        dqkv.slice_mut(s![.., d + c..d + c + dh]).assign(&ds.t().dot(&q));
    }
    linear_backward(&dqkv.view(), &cache.input.view(), p, g, qkv_slots)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

pub(crate) struct MlpCache<T> {
    input: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

pub(crate) fn mlp<T: Scalar>(
    x: Array2<T>,
    p: &[T],
    fc1: &LinearSlots,
    fc2: &LinearSlots,
) -> (Array2<T>, MlpCache<T>) {
    let pre = linear(&x.view(), p, fc1);
    let act = pre.mapv(gelu);
    let out = linear(&act.view(), p, fc2);
    (out, MlpCache { input: x, pre, act })
}

pub(crate) fn mlp_backward<T: Scalar>(
    dout: &ArrayView2<T>,
    cache: &MlpCache<T>,
    p: &[T],
    g: &mut [T],
    fc1: &LinearSlots,
    fc2: &LinearSlots,
) -> Array2<T> {
    let mut dact = linear_backward(dout, &cache.act.view(), p, g, fc2);
    Zip::from(&mut dact)
        .and(&cache.pre)
        .for_each(|d, &x| *d = *d * gelu_grad(x));
    linear_backward(&dact.view(), &cache.input.view(), p, g, fc1)
}

pub(crate) struct BlockCache<T> {
    norm1: NormCache<T>,
    attn: AttnCache<T>,
    norm2: NormCache<T>,
    mlp: MlpCache<T>,
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
pub(crate) fn block<T: Scalar>(
    x: Array2<T>,
    p: &[T],
    b: &BlockSlots,
    heads: usize,
) -> (Array2<T>, BlockCache<T>) {
    let (h, norm1) = layer_norm(&x.view(), p, &b.norm1);
    let (a, attn) = attention(h, p, &b.qkv, &b.proj, heads);
    let x = x + a;
    let (h, norm2) = layer_norm(&x.view(), p, &b.norm2);
    let (m, mlp_cache) = mlp(h, p, &b.fc1, &b.fc2);
    (
        x + m,
        BlockCache {
            norm1,
            attn,
            norm2,
            mlp: mlp_cache,
        },
    )
}

pub(crate) fn block_backward<T: Scalar>(
    dy: Array2<T>,
    cache: &BlockCache<T>,
    p: &[T],
    g: &mut [T],
    b: &BlockSlots,
    heads: usize,
) -> Array2<T> {
    let dh = mlp_backward(&dy.view(), &cache.mlp, p, g, &b.fc1, &b.fc2);
    let dx = dy + layer_norm_backward(&dh.view(), &cache.norm2, p, g, &b.norm2);
    let dh = attention_backward(&dx.view(), &cache.attn, p, g, &b.qkv, &b.proj, heads);
    let dn = layer_norm_backward(&dh.view(), &cache.norm1, p, g, &b.norm1);
    dx + dn
}
