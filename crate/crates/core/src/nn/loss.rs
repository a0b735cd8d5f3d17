use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Mean cross-entropy and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossValue<T> {
    pub loss: f64,
    pub grad: Tensor4<T>,
    pub valid_pixels: usize,
}

/// Softmax over the channel axis, pixel by pixel.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let s = logits.shape();
    let p = s.plane();
    let mut out = Tensor4::zeros(s);
    let mut buf = vec![0.0f64; s.c];
    for n in 0..s.n {
        let src = logits.sample(n);
        let dst = out.sample_mut(n);
        for i in 0..p {
            let m = (0..s.c).map(|c| src[c * p + i].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, b) in buf.iter_mut().enumerate() {
                *b = (src[c * p + i].as_f64() - m).exp();
                z += *b;
            }
            for (c, b) in buf.iter().enumerate() {
                dst[c * p + i] = T::of_f64(b / z);
            }
        }
    }
    out
}

/// One-hot `(n, k, h, w)` targets from a label raster of `n * h * w` class
/// indices. Labels `>= k` produce an all-zero column; mask them out.
pub fn one_hot<T: Scalar>(labels: &[u8], shape: Shape4) -> Result<Tensor4<T>> {
    if labels.len() != shape.n * shape.plane() {
        return Err(Error::Shape(format!(
            "{} labels for a {}x{}x{} raster",
            labels.len(),
            shape.n,
            shape.h,
            shape.w
        )));
    }
    let p = shape.plane();
    let mut t = Tensor4::zeros(shape);
    for n in 0..shape.n {
        for i in 0..p {
            let k = labels[n * p + i] as usize;
            if k < shape.c {
                t.sample_mut(n)[k * p + i] = T::one();
            }
        }
    }
    Ok(t)
}

/// `L = -(1/n_valid) sum_pixels sum_k y_k log softmax(z)_k` over the pixels
/// not flagged in `ignore` (one flag per `(n, h, w)` pixel). The gradient is
/// `(softmax(z) - y) / n_valid` on valid pixels and exactly zero elsewhere.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    targets: &Tensor4<T>,
    ignore: Option<&[bool]>,
) -> Result<LossValue<T>> {
    let s = logits.shape();
    targets.expect_shape(s, "softmax_cross_entropy targets")?;
    let p = s.plane();
    if let Some(m) = ignore {
        if m.len() != s.n * p {
            return Err(Error::Shape(format!(
                "ignore mask has {} entries for {} pixels",
                m.len(),
                s.n * p
            )));
        }
    }
    let is_valid = |n: usize, i: usize| ignore.is_none_or(|m| !m[n * p + i]);
    let valid = (0..s.n)
        .map(|n| (0..p).filter(|&i| is_valid(n, i)).count())
        .sum::<usize>();
    if valid == 0 {
        return Err(Error::NoValidPixels);
    }
    let inv = 1.0 / valid as f64;
    let mut grad = Tensor4::zeros(s);
    let mut total = 0.0f64;
    let mut e = vec![0.0f64; s.c];
    for n in 0..s.n {
        let z = logits.sample(n);
        let y = targets.sample(n);
        let g = grad.sample_mut(n);
        for i in 0..p {
            if !is_valid(n, i) {
                continue;
            }
            let m = (0..s.c).map(|c| z[c * p + i].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, ec) in e.iter_mut().enumerate() {
                *ec = (z[c * p + i].as_f64() - m).exp();
                sum += *ec;
            }
            let lse = m + sum.ln();
            for (c, ec) in e.iter().enumerate() {
                let yc = y[c * p + i].as_f64();
                if yc != 0.0 {
                    total -= yc * (z[c * p + i].as_f64() - lse);
                }
                g[c * p + i] = T::of_f64((ec / sum - yc) * inv);
            }
        }
    }
    Ok(LossValue {
        loss: total * inv,
        grad,
        valid_pixels: valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_cost_log_k() {
        let s = Shape4::new(1, 5, 2, 3).unwrap();
        let logits = Tensor4::<f64>::filled(s, 0.7);
        let targets = one_hot(&[0, 1, 2, 3, 4, 0], s).unwrap();
        let l = softmax_cross_entropy(&logits, &targets, None).unwrap();
        assert!((l.loss - 5f64.ln()).abs() < 1e-12);
        assert!((l.loss - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn gradient_is_softmax_minus_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Shape4::new(2, 4, 3, 3).unwrap();
        let logits = Tensor4::<f64>::from_fn(s, |_, _, _, _| rng.random_range(-3.0..3.0));
        let labels: Vec<u8> = (0..18).map(|_| rng.random_range(0..4)).collect();
        let targets = one_hot(&labels, s).unwrap();
        let l = softmax_cross_entropy(&logits, &targets, None).unwrap();
        let p = softmax(&logits);
        for i in 0..s.len() {
            let want = (p.data()[i] - targets.data()[i]) / 18.0;
            assert!((l.grad.data()[i] - want).abs() < 1e-6);
        }
        // probabilities per pixel
        for n in 0..2 {
            for px in 0..9 {
                let sum: f64 = (0..4).map(|c| p.sample(n)[c * 9 + px]).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn masked_pixels_get_no_gradient() {
        let s = Shape4::new(1, 3, 1, 4).unwrap();
        let logits = Tensor4::<f32>::new([1, 3, 1, 4], (0..12).map(|v| v as f32 * 0.3).collect());
        let targets = one_hot(&[0, 1, 2, 0], s).unwrap();
        let mask = [false, true, false, true];
        let l = softmax_cross_entropy(&logits, &targets, Some(&mask)).unwrap();
        assert_eq!(l.valid_pixels, 2);
        for c in 0..3 {
            assert_eq!(l.grad.at(0, c, 0, 1), 0.0);
            assert_eq!(l.grad.at(0, c, 0, 3), 0.0);
        }
        let all = [true; 4];
        assert!(matches!(
            softmax_cross_entropy(&logits, &targets, Some(&all)),
            Err(Error::NoValidPixels)
        ));
    }
}
