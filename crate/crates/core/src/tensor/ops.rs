//! Differentiable operators.

use super::{numel, Result, Tensor, TensorError};
use crate::Scalar;

fn mismatch(msg: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch(msg.into())
}

fn dims3<S: Scalar>(x: &Tensor<S>, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, w] => Ok((b, c, w)),
        ref s => Err(mismatch(format!("{what} expects [batch, channels, width], got {s:?}"))),
    }
}

fn dims2<S: Scalar>(x: &Tensor<S>, what: &str) -> Result<(usize, usize)> {
    match *x.shape() {
        [b, f] => Ok((b, f)),
        ref s => Err(mismatch(format!("{what} expects [batch, features], got {s:?}"))),
    }
}

fn unary<S: Scalar>(x: &Tensor<S>, f: impl Fn(S) -> S, df: impl Fn(S, S) -> S + 'static) -> Tensor<S> {
    let y: Vec<S> = x.data().iter().map(|&v| f(v)).collect();
    let xs = x.clone();
    let ys = y.clone();
    Tensor::from_op(x.shape().to_vec(), y, vec![x.clone()], move |g| {
        let gx = g
            .iter()
            .zip(xs.data())
            .zip(&ys)
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(gx)]
    })
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    unary(x, |v| v.max(S::zero()), |x, _| if x > S::zero() { S::one() } else { S::zero() })
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    unary(
        x,
        |v| {
            // Split on sign so exp never overflows.
            if v >= S::zero() {
                S::one() / (S::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (S::one() + e)
            }
        },
        |_, y| y * (S::one() - y),
    )
}

/// Elementwise absolute value; derivative at 0 is taken as 0.
pub fn abs<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    unary(
        x,
        |v| v.abs(),
        |x, _| {
            if x > S::zero() {
                S::one()
            } else if x < S::zero() {
                -S::one()
            } else {
                S::zero()
            }
        },
    )
}

pub fn scale<S: Scalar>(x: &Tensor<S>, c: S) -> Tensor<S> {
    unary(x, move |v| v * c, move |_, _| c)
}

/// Sum of all elements, as a scalar.
pub fn sum<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let n = x.numel();
    let total = x.data().iter().copied().sum();
    Tensor::from_op(vec![], vec![total], vec![x.clone()], move |g| vec![Some(vec![g[0]; n])])
}

pub fn reshape<S: Scalar>(x: &Tensor<S>, shape: Vec<usize>) -> Result<Tensor<S>> {
    if numel(&shape) != x.numel() {
        return Err(mismatch(format!("cannot reshape {:?} to {shape:?}", x.shape())));
    }
    Ok(Tensor::from_op(shape, x.to_vec(), vec![x.clone()], |g| vec![Some(g.to_vec())]))
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(mismatch(format!("cannot broadcast {a:?} with {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// For each element of `out`, the flat index of the element of `input` it reads.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if input[d] == 1 { 0 } else { s };
        s *= input[d];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0; rank];
    let mut off = 0;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

/// Elementwise binary op with size-1 broadcasting on equal-rank shapes.
/// `grads(g, a, b)` returns the partials scaled by the output gradient.
fn binary<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
    grads: impl Fn(S, S, S) -> (S, S) + 'static,
) -> Result<Tensor<S>> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let n = numel(&shape);
    let ma = (a.shape() != shape.as_slice()).then(|| broadcast_map(&shape, a.shape()));
    let mb = (b.shape() != shape.as_slice()).then(|| broadcast_map(&shape, b.shape()));
    let at = |m: &Option<Vec<usize>>, i: usize| m.as_ref().map_or(i, |m| m[i]);
    let (ad, bd) = (a.data(), b.data());
    let out = (0..n).map(|i| f(ad[at(&ma, i)], bd[at(&mb, i)])).collect();
    let (ac, bc) = (a.clone(), b.clone());
    let (na, nb) = (a.numel(), b.numel());
    Ok(Tensor::from_op(shape, out, vec![a.clone(), b.clone()], move |g| {
        let mut ga = vec![S::zero(); na];
        let mut gb = vec![S::zero(); nb];
        let (ad, bd) = (ac.data(), bc.data());
        for (i, &gi) in g.iter().enumerate() {
            let (ia, ib) = (at(&ma, i), at(&mb, i));
            let (da, db) = grads(gi, ad[ia], bd[ib]);
            ga[ia] += da;
            gb[ib] += db;
        }
        vec![ac.requires_grad().then_some(ga), bc.requires_grad().then_some(gb)]
    }))
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    binary(a, b, |x, y| x + y, |g, _, _| (g, g))
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    binary(a, b, |x, y| x - y, |g, _, _| (g, -g))
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    binary(a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
}

/// Row-wise softmax over `[batch, classes]`, max-subtracted.
pub fn softmax<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (b, c) = dims2(x, "softmax")?;
    let mut y = x.to_vec();
    for row in y.chunks_exact_mut(c) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    let ys = y.clone();
    Ok(Tensor::from_op(vec![b, c], y, vec![x.clone()], move |g| {
        let mut gx = vec![S::zero(); g.len()];
        for ((gr, yr), out) in g.chunks_exact(c).zip(ys.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
            let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
            for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                *o = yi * (gi - dot);
            }
        }
        vec![Some(gx)]
    }))
}

/// Concatenates along axis 1. All inputs must agree on every other axis.
pub fn concat<S: Scalar>(xs: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = xs.first().ok_or_else(|| mismatch("concat of nothing"))?;
    let rank = first.shape().len();
    if rank < 2 {
        return Err(mismatch("concat needs rank >= 2"));
    }
    let outer = first.shape()[0];
    let inner: usize = first.shape()[2..].iter().product();
    for x in xs {
        if x.shape().len() != rank || x.shape()[0] != outer || x.shape()[2..] != first.shape()[2..] {
            return Err(mismatch(format!("concat {:?} with {:?}", first.shape(), x.shape())));
        }
    }
    let widths: Vec<usize> = xs.iter().map(|x| x.shape()[1] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (x, &w) in xs.iter().zip(&widths) {
            out.extend_from_slice(&x.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = xs.iter().map(|x| x.shape()[1]).sum();
    let flags: Vec<bool> = xs.iter().map(Tensor::requires_grad).collect();
    Ok(Tensor::from_op(shape, out, xs.to_vec(), move |g| {
        let mut offset = 0;
        widths
            .iter()
            .zip(&flags)
            .map(|(&w, &needed)| {
                let start = offset;
                offset += w;
                needed.then(|| (0..outer).flat_map(|o| g[o * total + start..o * total + start + w].iter().copied()).collect())
            })
            .collect()
    }))
}

/// `x [B,F] · w [F,G] + b [G]`.
pub fn linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, f) = dims2(x, "linear input")?;
    let (wf, g) = dims2(w, "linear weight")?;
    if wf != f || b.shape() != [g] {
        return Err(mismatch(format!(
            "linear {:?} x {:?} + {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = Vec::with_capacity(batch * g);
    for r in 0..batch {
        let mut row = bd.to_vec();
        for (k, &xv) in xd[r * f..(r + 1) * f].iter().enumerate() {
            for (o, &wv) in row.iter_mut().zip(&wd[k * g..(k + 1) * g]) {
                *o += xv * wv;
            }
        }
        out.extend(row);
    }
    let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
    Ok(Tensor::from_op(vec![batch, g], out, vec![x.clone(), w.clone(), b.clone()], move |grad| {
        let (xd, wd) = (xc.data(), wc.data());
        let gx = xc.requires_grad().then(|| {
            let mut gx = vec![S::zero(); batch * f];
            for r in 0..batch {
                let gr = &grad[r * g..(r + 1) * g];
                for k in 0..f {
                    gx[r * f + k] = gr.iter().zip(&wd[k * g..(k + 1) * g]).map(|(&a, &b)| a * b).sum();
                }
            }
            gx
        });
        let gw = wc.requires_grad().then(|| {
            let mut gw = vec![S::zero(); f * g];
            for r in 0..batch {
                let gr = &grad[r * g..(r + 1) * g];
                for k in 0..f {
                    let xv = xd[r * f + k];
                    for (o, &gv) in gw[k * g..(k + 1) * g].iter_mut().zip(gr) {
                        *o += xv * gv;
                    }
                }
            }
            gw
        });
        let gb = bc.requires_grad().then(|| {
            let mut gb = vec![S::zero(); g];
            for gr in grad.chunks_exact(g) {
                gb.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
            }
            gb
        });
        vec![gx, gw, gb]
    }))
}

/// Output positions `i` in `[lo, hi)` whose input tap `i*stride + k - padding`
/// falls inside `[0, width)`.
fn tap_range(width: usize, out_w: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if k >= padding { 0 } else { (padding - k).div_ceil(stride) };
    let hi = if width + padding > k { (width - 1 + padding - k) / stride + 1 } else { 0 };
    (lo.min(out_w), hi.min(out_w))
}

/// 1-D cross-correlation (no kernel flip).
///
/// `x [B,Cin,W]`, `kernel [Cout,Cin,K]`, `bias [Cout]` give
/// `[B, Cout, (W + 2 padding - K) / stride + 1]`.
pub fn conv1d<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let (batch, cin, width) = dims3(x, "conv1d input")?;
    let (cout, kcin, k) = dims3(kernel, "conv1d kernel")?;
    if kcin != cin || bias.shape() != [cout] {
        return Err(mismatch(format!(
            "conv1d input {:?}, kernel {:?}, bias {:?}",
            x.shape(),
            kernel.shape(),
            bias.shape()
        )));
    }
    if stride == 0 || width + 2 * padding < k || k == 0 {
        return Err(mismatch(format!(
            "conv1d width {width} padding {padding} kernel {k} stride {stride}"
        )));
    }
    let out_w = (width + 2 * padding - k) / stride + 1;
    let (xd, wd, bd) = (x.data(), kernel.data(), bias.data());
    let mut out = vec![S::zero(); batch * cout * out_w];
    for b in 0..batch {
        for co in 0..cout {
            let o = &mut out[(b * cout + co) * out_w..(b * cout + co + 1) * out_w];
            o.fill(bd[co]);
            for ci in 0..cin {
                let xr = &xd[(b * cin + ci) * width..(b * cin + ci + 1) * width];
                for kk in 0..k {
                    let wv = wd[(co * cin + ci) * k + kk];
                    let (lo, hi) = tap_range(width, out_w, kk, stride, padding);
                    if lo >= hi {
                        continue;
                    }
                    if stride == 1 {
                        let src = &xr[lo + kk - padding..hi + kk - padding];
                        for (ov, &xv) in o[lo..hi].iter_mut().zip(src) {
                            *ov += wv * xv;
                        }
                    } else {
                        for i in lo..hi {
                            o[i] += wv * xr[i * stride + kk - padding];
                        }
                    }
                }
            }
        }
    }
    let (xc, wc, bc) = (x.clone(), kernel.clone(), bias.clone());
    Ok(Tensor::from_op(
        vec![batch, cout, out_w],
        out,
        vec![x.clone(), kernel.clone(), bias.clone()],
        move |g| {
            let (xd, wd) = (xc.data(), wc.data());
            let need_x = xc.requires_grad();
            let need_w = wc.requires_grad();
            let mut gx = vec![S::zero(); if need_x { xd.len() } else { 0 }];
            let mut gw = vec![S::zero(); if need_w { wd.len() } else { 0 }];
            let mut gb = vec![S::zero(); cout];
            for b in 0..batch {
                for co in 0..cout {
                    let gr = &g[(b * cout + co) * out_w..(b * cout + co + 1) * out_w];
                    gb[co] += gr.iter().copied().sum();
                    for ci in 0..cin {
                        let row = (b * cin + ci) * width;
                        for kk in 0..k {
                            let widx = (co * cin + ci) * k + kk;
                            let (lo, hi) = tap_range(width, out_w, kk, stride, padding);
                            if lo >= hi {
                                continue;
                            }
                            if need_x {
                                let wv = wd[widx];
                                for i in lo..hi {
                                    gx[row + i * stride + kk - padding] += wv * gr[i];
                                }
                            }
                            if need_w {
                                let mut acc = S::zero();
                                for i in lo..hi {
                                    acc += gr[i] * xd[row + i * stride + kk - padding];
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
            vec![need_x.then_some(gx), need_w.then_some(gw), bc.requires_grad().then_some(gb)]
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> RunningStats<S> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![S::zero(); channels], var: vec![S::one(); channels] }
    }
}

/// Batch normalization over `[B,C]` or `[B,C,W]`, statistics per channel.
///
/// Train mode normalizes with the biased batch variance and moves the running
/// statistics toward the batch ones by `momentum` (unbiased variance). Eval
/// mode uses the running statistics and leaves them unchanged.
pub fn batch_norm1d<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running: &mut RunningStats<S>,
    mode: Mode,
    eps: S,
    momentum: S,
) -> Result<Tensor<S>> {
    let (batch, c, w) = match *x.shape() {
        [b, c] => (b, c, 1),
        [b, c, w] => (b, c, w),
        ref s => return Err(mismatch(format!("batch_norm1d input {s:?}"))),
    };
    if gamma.shape() != [c] || beta.shape() != [c] || running.mean.len() != c || running.var.len() != c {
        return Err(mismatch(format!(
            "batch_norm1d input {:?} with gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let n = batch * w;
    let xd = x.data();
    let at = move |b: usize, ch: usize| (b * c + ch) * w;
    let (mean, inv_std): (Vec<S>, Vec<S>) = match mode {
        Mode::Train => {
            let nn = S::from_usize_lossy(n);
            let mut mean = vec![S::zero(); c];
            let mut var = vec![S::zero(); c];
            for ch in 0..c {
                let mut s = S::zero();
                for b in 0..batch {
                    s += xd[at(b, ch)..at(b, ch) + w].iter().copied().sum();
                }
                let m = s / nn;
                let mut ss = S::zero();
                for b in 0..batch {
                    ss += xd[at(b, ch)..at(b, ch) + w].iter().map(|&v| (v - m) * (v - m)).sum();
                }
                mean[ch] = m;
                var[ch] = ss / nn;
            }
            let unbias = if n > 1 { nn / S::from_usize_lossy(n - 1) } else { S::one() };
            for ch in 0..c {
                running.mean[ch] = (S::one() - momentum) * running.mean[ch] + momentum * mean[ch];
                running.var[ch] = (S::one() - momentum) * running.var[ch] + momentum * var[ch] * unbias;
            }
            let inv = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        }
        Mode::Eval => (
            running.mean.clone(),
            running.var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect(),
        ),
    };
    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![S::zero(); xd.len()];
    let mut out = vec![S::zero(); xd.len()];
    for b in 0..batch {
        for ch in 0..c {
            for i in at(b, ch)..at(b, ch) + w {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
    }
    let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(x.shape().to_vec(), out, vec![x.clone(), gamma.clone(), beta.clone()], move |g| {
        let gd = gc.data();
        let mut gg = vec![S::zero(); c];
        let mut gb = vec![S::zero(); c];
        for b in 0..batch {
            for ch in 0..c {
                for i in at(b, ch)..at(b, ch) + w {
                    gg[ch] += g[i] * xhat[i];
                    gb[ch] += g[i];
                }
            }
        }
        let gx = xc.requires_grad().then(|| {
            let mut gx = vec![S::zero(); g.len()];
            match mode {
                Mode::Train => {
                    // dx = inv_std / n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                    // with dxhat = g * gamma, so the sums are gamma * gb and gamma * gg.
                    let nn = S::from_usize_lossy(n);
                    for b in 0..batch {
                        for ch in 0..c {
                            let k = gd[ch] * inv_std[ch] / nn;
                            for i in at(b, ch)..at(b, ch) + w {
                                gx[i] = k * (nn * g[i] - gb[ch] - xhat[i] * gg[ch]);
                            }
                        }
                    }
                }
                Mode::Eval => {
                    for b in 0..batch {
                        for ch in 0..c {
                            for i in at(b, ch)..at(b, ch) + w {
                                gx[i] = g[i] * gd[ch] * inv_std[ch];
                            }
                        }
                    }
                }
            }
            gx
        });
        vec![gx, gc.requires_grad().then_some(gg), bc.requires_grad().then_some(gb)]
    }))
}

/// Max pooling along width; the gradient goes to the first maximal input.
pub fn max_pool1d<S: Scalar>(x: &Tensor<S>, kernel: usize, stride: usize) -> Result<Tensor<S>> {
    let (batch, c, w) = dims3(x, "max_pool1d")?;
    if kernel == 0 || stride == 0 || kernel > w {
        return Err(mismatch(format!("max_pool1d kernel {kernel} stride {stride} width {w}")));
    }
    let out_w = (w - kernel) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(batch * c * out_w);
    let mut arg = Vec::with_capacity(batch * c * out_w);
    for row in 0..batch * c {
        let xr = &xd[row * w..(row + 1) * w];
        for i in 0..out_w {
            let mut best = i * stride;
            for j in i * stride + 1..i * stride + kernel {
                if xr[j] > xr[best] {
                    best = j;
                }
            }
            out.push(xr[best]);
            arg.push(row * w + best);
        }
    }
    let len = xd.len();
    Ok(Tensor::from_op(vec![batch, c, out_w], out, vec![x.clone()], move |g| {
        let mut gx = vec![S::zero(); len];
        for (&i, &gv) in arg.iter().zip(g) {
            gx[i] += gv;
        }
        vec![Some(gx)]
    }))
}

/// Mean over width: `[B,C,W] -> [B,C]`.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, c, w) = dims3(x, "global_avg_pool")?;
    let inv = S::one() / S::from_usize_lossy(w);
    let out = x.data().chunks_exact(w).map(|r| r.iter().copied().sum::<S>() * inv).collect();
    Ok(Tensor::from_op(vec![batch, c], out, vec![x.clone()], move |g| {
        vec![Some(g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, w)).collect())]
    }))
}

/// Max over width: `[B,C,W] -> [B,C]`.
pub fn global_max_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, c, w) = dims3(x, "global_max_pool")?;
    max_pool1d(x, w, w).and_then(|y| reshape(&y, vec![batch, c]))
}

/// Pools across channels: `[B,C,W] -> [B,2,W]` with channel 0 the mean over
/// `C` and channel 1 the max over `C` at each position.
pub fn channel_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, c, w) = dims3(x, "channel_pool")?;
    if c == 0 {
        return Err(mismatch("channel_pool on zero channels"));
    }
    let xd = x.data();
    let inv = S::one() / S::from_usize_lossy(c);
    let mut out = vec![S::zero(); batch * 2 * w];
    let mut arg = vec![0usize; batch * w];
    for b in 0..batch {
        for i in 0..w {
            let mut s = S::zero();
            let mut best = 0;
            for ch in 0..c {
                let v = xd[(b * c + ch) * w + i];
                s += v;
                if v > xd[(b * c + best) * w + i] {
                    best = ch;
                }
            }
            out[(b * 2) * w + i] = s * inv;
            out[(b * 2 + 1) * w + i] = xd[(b * c + best) * w + i];
            arg[b * w + i] = (b * c + best) * w + i;
        }
    }
    let len = xd.len();
    Ok(Tensor::from_op(vec![batch, 2, w], out, vec![x.clone()], move |g| {
        let mut gx = vec![S::zero(); len];
        for b in 0..batch {
            for i in 0..w {
                let gm = g[(b * 2) * w + i] * inv;
                for ch in 0..c {
                    gx[(b * c + ch) * w + i] += gm;
                }
                gx[arg[b * w + i]] += g[(b * 2 + 1) * w + i];
            }
        }
        vec![Some(gx)]
    }))
}

/// `sign(x) * max(|x| - tau, 0)` with `tau` broadcast to the shape of `x`.
///
/// Subgradients: `dy/dx = 1` and `dy/dtau = -sign(x)` where `|x| > tau`,
/// both 0 elsewhere (including `|x| == tau`).
pub fn soft_threshold<S: Scalar>(x: &Tensor<S>, tau: &Tensor<S>) -> Result<Tensor<S>> {
    if tau.data().iter().any(|&t| t < S::zero()) {
        return Err(TensorError::NegativeThreshold);
    }
    let shape = broadcast_shape(x.shape(), tau.shape())?;
    if shape != x.shape() {
        return Err(mismatch(format!("threshold {:?} larger than input {:?}", tau.shape(), x.shape())));
    }
    let map = broadcast_map(&shape, tau.shape());
    let (xd, td) = (x.data(), tau.data());
    let out = xd
        .iter()
        .zip(&map)
        .map(|(&v, &ti)| {
            let m = v.abs() - td[ti];
            if m > S::zero() {
                m.copysign(v)
            } else {
                S::zero()
            }
        })
        .collect();
    let (xc, tc) = (x.clone(), tau.clone());
    Ok(Tensor::from_op(shape, out, vec![x.clone(), tau.clone()], move |g| {
        let (xd, td) = (xc.data(), tc.data());
        let mut gx = vec![S::zero(); xd.len()];
        let mut gt = vec![S::zero(); td.len()];
        for (i, (&v, &ti)) in xd.iter().zip(&map).enumerate() {
            if v.abs() > td[ti] {
                gx[i] = g[i];
                gt[ti] -= g[i] * v.signum();
            }
        }
        vec![xc.requires_grad().then_some(gx), tc.requires_grad().then_some(gt)]
    }))
}
