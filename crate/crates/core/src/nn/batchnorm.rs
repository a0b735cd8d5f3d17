//! Per-channel batch normalization over `(n, h, w)`.

use crate::error::{Error, Result};
use crate::nn::params::RunningStats;
use crate::tensor::{Scalar, Tensor4};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// What a training-mode forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

pub enum BnMode<'a, T> {
    Train,
    Infer(&'a RunningStats<T>),
}

fn check<T: Scalar>(x: &Tensor4<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    let c = x.shape().c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm: {c} channels but gamma/beta have {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Returns the normalized output, and the cache when in training mode.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
    mode: BnMode<'_, T>,
) -> Result<(Tensor4<T>, Option<BnCache<T>>)> {
    check(x, gamma, beta)?;
    match mode {
        BnMode::Train => {
            let (y, cache) = batchnorm_train(x, gamma, beta, eps);
            Ok((y, Some(cache)))
        }
        BnMode::Infer(stats) => Ok((batchnorm_infer(x, gamma, beta, stats, eps)?, None)),
    }
}

pub(crate) fn batchnorm_train<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Tensor4<T>, BnCache<T>) {
    let s = x.shape();
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    for c in 0..s.c {
        let mut acc = 0.0;
        for n in 0..s.n {
            acc += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        mean[c] = acc / count;
        let mut sq = 0.0;
        for n in 0..s.n {
            sq += x
                .plane(n, c)
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean[c];
                    d * d
                })
                .sum::<f64>();
        }
        var[c] = sq / count;
    }
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::of_f64(1.0 / (v + eps).sqrt()))
        .collect();
    let mut xhat = Tensor4::zeros(s);
    let mut y = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let m = T::of_f64(mean[c]);
            let src = x.plane(n, c);
            for (h, &v) in xhat.plane_mut(n, c).iter_mut().zip(src) {
                *h = (v - m) * inv_std[c];
            }
            for (o, &h) in y.plane_mut(n, c).iter_mut().zip(xhat.plane(n, c)) {
                *o = gamma[c] * h + beta[c];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

pub(crate) fn infer_scale<T: Scalar>(stats: &RunningStats<T>, eps: f64) -> Vec<T> {
    stats
        .var
        .iter()
        .map(|&v| T::of_f64(1.0 / (v.as_f64() + eps).sqrt()))
        .collect()
}

pub(crate) fn batchnorm_infer<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    stats: &RunningStats<T>,
    eps: f64,
) -> Result<Tensor4<T>> {
    let s = x.shape();
    if stats.mean.len() != s.c {
        return Err(Error::Shape(format!(
            "batchnorm running statistics have {} channels, input has {}",
            stats.mean.len(),
            s.c
        )));
    }
    let scale = infer_scale(stats, eps);
    let mut y = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let m = stats.mean[c];
            for (o, &v) in y.plane_mut(n, c).iter_mut().zip(x.plane(n, c)) {
                *o = gamma[c] * ((v - m) * scale[c]) + beta[c];
            }
        }
    }
    Ok(y)
}

pub struct BnGrads<T> {
    pub dx: Tensor4<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

/// Backward pass of the training-mode expression, batch statistics included.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor4<T>,
) -> Result<BnGrads<T>> {
    let s = cache.xhat.shape();
    dy.expect_shape(s, "batchnorm_backward dy")?;
    let count = (s.n * s.plane()) as f64;
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    let mut dx = Tensor4::zeros(s);
    for c in 0..s.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for n in 0..s.n {
            for (&g, &h) in dy.plane(n, c).iter().zip(cache.xhat.plane(n, c)) {
                sum_dy += g.as_f64();
                sum_dy_xhat += g.as_f64() * h.as_f64();
            }
        }
        dgamma[c] = T::of_f64(sum_dy_xhat);
        dbeta[c] = T::of_f64(sum_dy);
        let k = gamma[c] * cache.inv_std[c];
        let mean_dy = T::of_f64(sum_dy / count);
        let mean_dy_xhat = T::of_f64(sum_dy_xhat / count);
        for n in 0..s.n {
            let src = dy.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            for ((d, &g), &h) in dx.plane_mut(n, c).iter_mut().zip(src).zip(xh) {
                *d = k * (g - mean_dy - h * mean_dy_xhat);
            }
        }
    }
    Ok(BnGrads { dx, dgamma, dbeta })
}

/// Backward pass when running statistics were used: a fixed affine map.
pub(crate) fn batchnorm_infer_backward<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    stats: &RunningStats<T>,
    eps: f64,
    dy: &Tensor4<T>,
) -> Result<BnGrads<T>> {
    let s = x.shape();
    dy.expect_shape(s, "batchnorm_backward dy")?;
    let scale = infer_scale(stats, eps);
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    let mut dx = Tensor4::zeros(s);
    for c in 0..s.c {
        let m = stats.mean[c];
        let (mut sg, mut sb) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            for ((d, &g), &v) in dx
                .plane_mut(n, c)
                .iter_mut()
                .zip(dy.plane(n, c))
                .zip(x.plane(n, c))
            {
                *d = g * gamma[c] * scale[c];
                sg += (g * (v - m) * scale[c]).as_f64();
                sb += g.as_f64();
            }
        }
        dgamma[c] = T::of_f64(sg);
        dbeta[c] = T::of_f64(sb);
    }
    Ok(BnGrads { dx, dgamma, dbeta })
}
