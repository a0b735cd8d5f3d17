use super::conv::{transposed_conv2d, transposed_conv2d_backward, DeconvSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// 1-D triangle filter of length `2f - f % 2` whose transposed convolution
/// with stride `f` is linear interpolation. `f = 1` gives `[1]`.
pub fn bilinear_profile(factor: usize) -> Vec<f64> {
    let size = 2 * factor - factor % 2;
    let center = if size % 2 == 1 {
        (factor - 1) as f64
    } else {
        factor as f64 - 0.5
    };
    (0..size)
        .map(|i| 1.0 - (i as f64 - center).abs() / factor as f64)
        .collect()
}

/// Geometry of a `factor`-times upsampling deconvolution: output = `factor * input`.
pub fn upsample_spec(factor: usize, channels: usize) -> DeconvSpec {
    let k = 2 * factor - factor % 2;
    DeconvSpec::new(k, factor, factor / 2, channels)
}

/// Channel-diagonal `(channels, channels, k, k)` bilinear kernel.
pub fn make_bilinear_kernel<T: Scalar>(factor: usize, channels: usize) -> Result<Tensor4<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsampling factor must be >= 1".into()));
    }
    let p = bilinear_profile(factor);
    let k = p.len();
    let shape = Shape4::new(channels, channels, k, k)?;
    Ok(Tensor4::from_fn(shape, |i, o, y, x| {
        if i == o {
            T::of_f64(p[y] * p[x])
        } else {
            T::zero()
        }
    }))
}

fn depthwise_kernel<T: Scalar>(factor: usize) -> Result<Tensor4<T>> {
    make_bilinear_kernel(factor, 1)
}

/// Fixed (non-learnable) bilinear upsampling of every channel independently.
pub fn upsample_bilinear<T: Scalar>(input: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    let s = input.shape();
    let kernel = depthwise_kernel::<T>(factor)?;
    let flat = input.clone().reshape(Shape4::new(s.n * s.c, 1, s.h, s.w)?)?;
    let up = transposed_conv2d(&flat, &kernel, None, &upsample_spec(factor, 1))?;
    let us = up.shape();
    up.reshape(Shape4::new(s.n, s.c, us.h, us.w)?)
}

pub fn upsample_bilinear_backward<T: Scalar>(
    input_shape: Shape4,
    dy: &Tensor4<T>,
    factor: usize,
) -> Result<Tensor4<T>> {
    let s = input_shape;
    let kernel = depthwise_kernel::<T>(factor)?;
    let ds = dy.shape();
    let flat_in = Tensor4::zeros(Shape4::new(s.n * s.c, 1, s.h, s.w)?);
    let flat_dy = dy.clone().reshape(Shape4::new(ds.n * ds.c, 1, ds.h, ds.w)?)?;
    let g = transposed_conv2d_backward(&flat_in, &kernel, &flat_dy, &upsample_spec(factor, 1))?;
    g.dx.reshape(s)
}
