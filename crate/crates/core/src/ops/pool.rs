use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Argmax record of a max pooling: for every pooled cell, the row-major
/// offset `dy * window + dx` of the selected input inside its window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    shape: Shape4,
    window: usize,
    dilation: usize,
    offsets: Vec<u32>,
}

impl PoolIndices {
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    /// Input coordinates `(y, x)` selected for pooled cell `(oy, ox)`.
    pub fn source(&self, n: usize, c: usize, oy: usize, ox: usize) -> (usize, usize) {
        let s = self.shape;
        let off = self.offsets[((n * s.c + c) * s.h + oy) * s.w + ox] as usize;
        let (dy, dx) = (off / self.window, off % self.window);
        if self.dilation == 0 {
            (oy * self.window + dy, ox * self.window + dx)
        } else {
            (oy + dy * self.dilation, ox + dx * self.dilation)
        }
    }
}

/// Pools `input` by reusing recorded argmax choices instead of searching.
pub fn pool_gather<T: Scalar>(input: &Tensor4<T>, indices: &PoolIndices) -> Result<Tensor4<T>> {
    let s = indices.shape;
    let is = input.shape();
    let expect = if indices.dilation == 0 {
        Shape4::new(s.n, s.c, s.h * indices.window, s.w * indices.window)?
    } else {
        s
    };
    input.expect_shape(expect, "pool_gather input")?;
    Ok(Tensor4::from_fn(s, |n, c, oy, ox| {
        let (y, x) = indices.source(n, c, oy, ox);
        debug_assert!(y < is.h && x < is.w);
        input.at(n, c, y, x)
    }))
}

fn pooled_shape(s: Shape4, k: usize) -> Result<Shape4> {
    if k == 0 {
        return Err(Error::InvalidArgument("pooling window must be >= 1".into()));
    }
    if s.h % k != 0 || s.w % k != 0 {
        return Err(Error::Shape(format!(
            "pooling window {k} does not evenly tile a {}x{} map",
            s.h, s.w
        )));
    }
    Shape4::new(s.n, s.c, s.h / k, s.w / k)
}

/// Non-overlapping `k x k` max pooling with stride `k`. Ties go to the first
/// maximum in row-major order within the window.
pub fn maxpool2d<T: Scalar>(input: &Tensor4<T>, k: usize) -> Result<(Tensor4<T>, PoolIndices)> {
    let s = input.shape();
    let os = pooled_shape(s, k)?;
    let mut out = Vec::with_capacity(os.len());
    let mut offsets = Vec::with_capacity(os.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = plane[oy * k * s.w + ox * k];
                    let mut arg = 0u32;
                    for dy in 0..k {
                        let row = &plane[(oy * k + dy) * s.w + ox * k..][..k];
                        for (dx, &v) in row.iter().enumerate() {
                            if v > best {
                                best = v;
                                arg = (dy * k + dx) as u32;
                            }
                        }
                    }
                    out.push(best);
                    offsets.push(arg);
                }
            }
        }
    }
    Ok((
        Tensor4::from_vec(os, out)?,
        PoolIndices {
            shape: os,
            window: k,
            dilation: 0,
            offsets,
        },
    ))
}

/// Routes each pooled gradient to the recorded argmax.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: Shape4,
    indices: &PoolIndices,
    dy: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    dy.expect_shape(indices.shape, "maxpool2d_backward dy")?;
    let mut dx = Tensor4::zeros(input_shape);
    scatter(indices, dy, &mut dx);
    Ok(dx)
}

fn scatter<T: Scalar>(indices: &PoolIndices, values: &Tensor4<T>, out: &mut Tensor4<T>) {
    let s = indices.shape;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..s.h {
                for ox in 0..s.w {
                    let (y, x) = indices.source(n, c, oy, ox);
                    let i = out.index(n, c, y, x);
                    let d = &mut out.data_mut()[i];
                    *d = *d + values.at(n, c, oy, ox);
                }
            }
        }
    }
}

/// Stride-1 max pooling over the window `{y + a*d, x + b*d : a, b < k}`;
/// window cells beyond the bottom/right border are skipped, so the output
/// keeps the input size. This is the pooling of a dilated (à trous) network:
/// sampling it with step `2d` at offset `o` gives the stride-`k` pooling of
/// the map shifted by `o`.
pub fn dilated_maxpool2d<T: Scalar>(
    input: &Tensor4<T>,
    k: usize,
    dilation: usize,
) -> Result<(Tensor4<T>, PoolIndices)> {
    if k == 0 || dilation == 0 {
        return Err(Error::InvalidArgument(
            "dilated pooling needs window and dilation >= 1".into(),
        ));
    }
    let s = input.shape();
    let mut out = Vec::with_capacity(s.len());
    let mut offsets = Vec::with_capacity(s.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut best = plane[y * s.w + x];
                    let mut arg = 0u32;
                    for a in 0..k {
                        let yy = y + a * dilation;
                        if yy >= s.h {
                            break;
                        }
                        for b in 0..k {
                            let xx = x + b * dilation;
                            if xx >= s.w {
                                break;
                            }
                            let v = plane[yy * s.w + xx];
                            if v > best {
                                best = v;
                                arg = (a * k + b) as u32;
                            }
                        }
                    }
                    out.push(best);
                    offsets.push(arg);
                }
            }
        }
    }
    Ok((
        Tensor4::from_vec(s, out)?,
        PoolIndices {
            shape: s,
            window: k,
            dilation,
            offsets,
        },
    ))
}

pub fn dilated_maxpool2d_backward<T: Scalar>(
    indices: &PoolIndices,
    dy: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    dy.expect_shape(indices.shape, "dilated_maxpool2d_backward dy")?;
    let mut dx = Tensor4::zeros(indices.shape);
    scatter(indices, dy, &mut dx);
    Ok(dx)
}

/// Non-overlapping `k x k` average pooling.
pub fn avg_pool2d<T: Scalar>(input: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    let s = input.shape();
    let os = pooled_shape(s, k)?;
    let scale = T::of_f64(1.0 / (k * k) as f64);
    let mut out = Tensor4::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        for &v in &plane[(oy * k + dy) * s.w + ox * k..][..k] {
                            acc = acc + v;
                        }
                    }
                    dst[oy * os.w + ox] = acc * scale;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`avg_pool2d`]: each pooled gradient spread as `g / k^2`.
pub fn avg_pool2d_backward<T: Scalar>(dy: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    super::unpool::avg_unpool2d(dy, k)
}
