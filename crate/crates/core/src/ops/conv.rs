//! Strided, dilated, zero-padded 2-D cross-correlation and its adjoint
//! (transposed convolution), both evaluated as im2col followed by a GEMM.
//!
//! Every output element is a sum over `(in_channel, kernel_row, kernel_col)`
//! in that fixed order, whatever the spatial size of the call. Results are
//! therefore bit-identical between a whole image and any crop of it that
//! produces the same output cell.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            stride: 1,
            padding: 0,
            dilation: 1,
            out_channels,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    /// `floor((H + 2p - d(k-1) - 1) / s) + 1` per axis, rejected when < 1.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.dilation == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv spec needs stride, dilation and kernel >= 1: {self:?}"
            )));
        }
        let axis = |len: usize, k: usize| -> Result<usize> {
            let span = self.dilation * (k - 1) + 1;
            let padded = len + 2 * self.padding;
            if padded < span {
                return Err(Error::Shape(format!(
                    "conv output size is not positive: input {len}, padding {}, dilated kernel extent {span}",
                    self.padding
                )));
            }
            Ok((padded - span) / self.stride + 1)
        };
        Ok((axis(h, self.kernel.0)?, axis(w, self.kernel.1)?))
    }

    pub fn param_count(&self, in_channels: usize, bias: bool) -> usize {
        self.kernel.0 * self.kernel.1 * in_channels * self.out_channels
            + if bias { self.out_channels } else { 0 }
    }
}

/// Transposed convolution: the adjoint of a convolution with the same
/// kernel and stride, cropped by `crop` on every border. `extra` adds rows
/// and columns at the bottom/right, needed to invert a strided convolution
/// whose input size was not `stride * (out - 1) + kernel - 2 * padding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub crop: usize,
    pub extra: usize,
    pub out_channels: usize,
}

impl DeconvSpec {
    pub fn new(kernel: usize, stride: usize, crop: usize, out_channels: usize) -> Self {
        DeconvSpec {
            kernel: (kernel, kernel),
            stride,
            crop,
            extra: 0,
            out_channels,
        }
    }

    pub fn extra(mut self, e: usize) -> Self {
        self.extra = e;
        self
    }

    /// `s (H - 1) + k - 2c + extra` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "deconv spec needs stride and kernel >= 1: {self:?}"
            )));
        }
        if self.extra >= self.stride.max(1) && self.extra > 0 {
            return Err(Error::InvalidArgument(format!(
                "deconv extra border {} must be smaller than the stride {}",
                self.extra, self.stride
            )));
        }
        let axis = |len: usize, k: usize| -> Result<usize> {
            let full = self.stride * (len - 1) + k + self.extra;
            if full <= 2 * self.crop {
                return Err(Error::Shape(format!(
                    "deconv crop {} consumes the whole {full}-pixel output",
                    self.crop
                )));
            }
            Ok(full - 2 * self.crop)
        };
        Ok((axis(h, self.kernel.0)?, axis(w, self.kernel.1)?))
    }

    pub fn param_count(&self, in_channels: usize, bias: bool) -> usize {
        self.kernel.0 * self.kernel.1 * in_channels * self.out_channels
            + if bias { self.out_channels } else { 0 }
    }
}

/// Sliding-window geometry from a `c x h x w` map to an `oh x ow` grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dil: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output positions `o` in `0..out` with `o*s + off - pad` inside `0..len`.
    fn valid_range(&self, off: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > off {
            (self.pad - off).div_ceil(s)
        } else {
            0
        };
        // largest o with o*s + off - pad <= len - 1
        let hi = if len + self.pad > off {
            ((len + self.pad - off - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

pub(crate) fn im2col<T: Scalar>(g: &Geometry, input: &[T], col: &mut [T]) {
    debug_assert_eq!(input.len(), g.c * g.h * g.w);
    debug_assert_eq!(col.len(), g.rows() * g.cols());
    let p = g.cols();
    for ci in 0..g.c {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.valid_range(ki * g.dil, g.h, g.oh);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.valid_range(kj * g.dil, g.w, g.ow);
                let row = &mut col[((ci * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if oy < ylo || oy >= yhi || xlo >= xhi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ki * g.dil - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    dst[..xlo].fill(T::zero());
                    dst[xhi..].fill(T::zero());
                    let x0 = xlo * g.stride + kj * g.dil - g.pad;
                    if g.stride == 1 {
                        dst[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                    } else {
                        for (i, d) in dst[xlo..xhi].iter_mut().enumerate() {
                            *d = src[x0 + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the `c x h x w` map.
pub(crate) fn col2im<T: Scalar>(g: &Geometry, col: &[T], out: &mut [T]) {
    debug_assert_eq!(out.len(), g.c * g.h * g.w);
    let p = g.cols();
    for ci in 0..g.c {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.valid_range(ki * g.dil, g.h, g.oh);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.valid_range(kj * g.dil, g.w, g.ow);
                if xlo >= xhi {
                    continue;
                }
                let row = &col[((ci * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki * g.dil - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    let x0 = xlo * g.stride + kj * g.dil - g.pad;
                    for (i, &v) in src[xlo..xhi].iter().enumerate() {
                        let d = &mut dst[x0 + i * g.stride];
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

fn check_bias<T>(bias: Option<&[T]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::Shape(format!(
            "bias has {} entries for {channels} output channels",
            b.len()
        ))),
        _ => Ok(()),
    }
}

fn add_bias<T: Scalar>(out: &mut Tensor4<T>, bias: Option<&[T]>) {
    if let Some(b) = bias {
        let s = out.shape();
        for n in 0..s.n {
            for (c, &bc) in b.iter().enumerate() {
                for v in out.plane_mut(n, c) {
                    *v = *v + bc;
                }
            }
        }
    }
}

fn channel_sums<T: Scalar>(dy: &Tensor4<T>) -> Vec<T> {
    let s = dy.shape();
    let mut db = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, acc) in db.iter_mut().enumerate() {
            for &v in dy.plane(n, c) {
                *acc = *acc + v;
            }
        }
    }
    db
}

fn conv_geometry<T: Scalar>(
    input: Shape4,
    weight: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    let ws = weight.shape();
    if ws.n != spec.out_channels || ws.c != input.c || (ws.h, ws.w) != spec.kernel {
        return Err(Error::Shape(format!(
            "conv2d: input {input} is incompatible with weight {ws} (expected {}x{}x{}x{})",
            spec.out_channels, input.c, spec.kernel.0, spec.kernel.1
        )));
    }
    let (oh, ow) = spec.output_size(input.h, input.w)?;
    Ok(Geometry {
        c: input.c,
        h: input.h,
        w: input.w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        dil: spec.dilation,
        oh,
        ow,
    })
}

/// Cross-correlation of `input (n, c, h, w)` with `weight (out_c, c, kh, kw)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let is = input.shape();
    let g = conv_geometry(is, weight, spec)?;
    check_bias(bias, spec.out_channels)?;
    let out_shape = Shape4::new(is.n, spec.out_channels, g.oh, g.ow)?;
    let mut out = Tensor4::zeros(out_shape);
    let (k, p) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); k * p];
    let wmat = MatRef::row_major(weight.data(), spec.out_channels, k);
    for n in 0..is.n {
        im2col(&g, input.sample(n), &mut col);
        gemm(
            wmat,
            MatRef::row_major(&col, k, p),
            T::zero(),
            out.sample_mut(n),
        );
    }
    add_bias(&mut out, bias);
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dx: Tensor4<T>,
    pub dw: Tensor4<T>,
    pub db: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    dy: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let is = input.shape();
    let g = conv_geometry(is, weight, spec)?;
    dy.expect_shape(
        Shape4::new(is.n, spec.out_channels, g.oh, g.ow)?,
        "conv2d_backward dy",
    )?;
    let (k, p) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); k * p];
    let mut dx = Tensor4::zeros(is);
    let mut dw = Tensor4::zeros(weight.shape());
    let wmat = MatRef::row_major(weight.data(), spec.out_channels, k);
    for n in 0..is.n {
        let dyn_ = MatRef::row_major(dy.sample(n), spec.out_channels, p);
        im2col(&g, input.sample(n), &mut col);
        gemm(
            dyn_,
            MatRef::row_major(&col, k, p).t(),
            T::one(),
            dw.data_mut(),
        );
        gemm(wmat.t(), dyn_, T::zero(), &mut col);
        col2im(&g, &col, dx.sample_mut(n));
    }
    Ok(ConvGrads {
        dx,
        dw,
        db: channel_sums(dy),
    })
}

fn deconv_geometry<T: Scalar>(
    input: Shape4,
    weight: &Tensor4<T>,
    spec: &DeconvSpec,
) -> Result<Geometry> {
    let ws = weight.shape();
    if ws.n != input.c || ws.c != spec.out_channels || (ws.h, ws.w) != spec.kernel {
        return Err(Error::Shape(format!(
            "transposed_conv2d: input {input} is incompatible with weight {ws} (expected {}x{}x{}x{})",
            input.c, spec.out_channels, spec.kernel.0, spec.kernel.1
        )));
    }
    let (oh, ow) = spec.output_size(input.h, input.w)?;
    // The forward convolution this operator is the adjoint of, seen from the
    // (larger) output map back onto the input grid.
    Ok(Geometry {
        c: spec.out_channels,
        h: oh,
        w: ow,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.crop,
        dil: 1,
        oh: input.h,
        ow: input.w,
    })
}

/// Transposed convolution of `input (n, c_in, h, w)` with
/// `weight (c_in, c_out, kh, kw)`.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &DeconvSpec,
) -> Result<Tensor4<T>> {
    let is = input.shape();
    let g = deconv_geometry(is, weight, spec)?;
    check_bias(bias, spec.out_channels)?;
    let out_shape = Shape4::new(is.n, spec.out_channels, g.h, g.w)?;
    let mut out = Tensor4::zeros(out_shape);
    let (k, p) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); k * p];
    let wmat = MatRef::row_major(weight.data(), is.c, k);
    for n in 0..is.n {
        gemm(
            wmat.t(),
            MatRef::row_major(input.sample(n), is.c, p),
            T::zero(),
            &mut col,
        );
        col2im(&g, &col, out.sample_mut(n));
    }
    add_bias(&mut out, bias);
    Ok(out)
}

pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    dy: &Tensor4<T>,
    spec: &DeconvSpec,
) -> Result<ConvGrads<T>> {
    let is = input.shape();
    let g = deconv_geometry(is, weight, spec)?;
    dy.expect_shape(
        Shape4::new(is.n, spec.out_channels, g.h, g.w)?,
        "transposed_conv2d_backward dy",
    )?;
    let (k, p) = (g.rows(), g.cols());
    let mut col = vec![T::zero(); k * p];
    let mut dx = Tensor4::zeros(is);
    let mut dw = Tensor4::zeros(weight.shape());
    let wmat = MatRef::row_major(weight.data(), is.c, k);
    for n in 0..is.n {
        im2col(&g, dy.sample(n), &mut col);
        let colm = MatRef::row_major(&col, k, p);
        gemm(wmat, colm, T::zero(), dx.sample_mut(n));
        gemm(
            MatRef::row_major(input.sample(n), is.c, p),
            colm.t(),
            T::one(),
            dw.data_mut(),
        );
    }
    Ok(ConvGrads {
        dx,
        dw,
        db: channel_sums(dy),
    })
}
