use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Stacks the parts along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::Shape(format!(
                "concat_channels: {s} does not match {first} in batch/spatial size"
            )));
        }
        channels += s.c;
    }
    let shape = Shape4::new(first.n, channels, first.h, first.w)?;
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.sample(n));
        }
    }
    Tensor4::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: splits `t` into blocks of the given channel counts.
pub fn split_channels<T: Scalar>(t: &Tensor4<T>, channels: &[usize]) -> Result<Vec<Tensor4<T>>> {
    let s = t.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::Shape(format!(
            "split_channels: {channels:?} does not sum to {} channels",
            s.c
        )));
    }
    let plane = s.plane();
    let mut out = Vec::with_capacity(channels.len());
    let mut start = 0;
    for &c in channels {
        let shape = Shape4::new(s.n, c, s.h, s.w)?;
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..s.n {
            let sample = t.sample(n);
            data.extend_from_slice(&sample[start * plane..(start + c) * plane]);
        }
        out.push(Tensor4::from_vec(shape, data)?);
        start += c;
    }
    Ok(out)
}
