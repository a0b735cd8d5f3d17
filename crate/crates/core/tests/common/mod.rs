#![allow(dead_code)]

use multires::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
    Shape4::new(n, c, h, w).unwrap()
}

/// Uniform in `[-1, 1)`.
pub fn random(dims: [usize; 4], rng: &mut impl Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape(dims[0], dims[1], dims[2], dims[3]), |_, _, _, _| {
        rng.random_range(-1.0..1.0)
    })
}

pub fn random_f32(dims: [usize; 4], rng: &mut impl Rng) -> Tensor4<f32> {
    random(dims, rng).cast()
}

/// Zero-padded, strided, dilated cross-correlation by direct summation.
pub fn direct_conv(
    x: &Tensor4<f64>,
    w: &Tensor4<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Tensor4<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let ho = (xs.h + 2 * pad - dil * (ws.h - 1) - 1) / stride + 1;
    let wo = (xs.w + 2 * pad - dil * (ws.w - 1) - 1) / stride + 1;
    Tensor4::from_fn(shape(xs.n, ws.n, ho, wo), |n, o, y, xx| {
        let mut acc = bias.map_or(0.0, |b| b[o]);
        for c in 0..xs.c {
            for i in 0..ws.h {
                for j in 0..ws.w {
                    let iy = (y * stride + i * dil) as isize - pad as isize;
                    let ix = (xx * stride + j * dil) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                        acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, i, j);
                    }
                }
            }
        }
        acc
    })
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

pub fn assert_close(a: &Tensor4<f64>, b: &Tensor4<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!(
            (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0),
            "element {i}: {x} vs {y}"
        );
    }
}
