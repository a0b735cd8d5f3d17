use super::pool::PoolIndices;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Writes every pooled value back at the location recorded by the matching
/// max pooling; every other cell of the `out_shape` map is zero.
pub fn max_unpool2d<T: Scalar>(
    pooled: &Tensor4<T>,
    indices: &PoolIndices,
    out_shape: Shape4,
) -> Result<Tensor4<T>> {
    let ps = pooled.shape();
    if ps != indices.shape() {
        return Err(Error::Shape(format!(
            "max_unpool2d: values {ps} vs indices {}",
            indices.shape()
        )));
    }
    let k = indices.window();
    if out_shape != Shape4::new(ps.n, ps.c, ps.h * k, ps.w * k)? {
        return Err(Error::Shape(format!(
            "max_unpool2d: output {out_shape} is not {ps} scaled by window {k}"
        )));
    }
    let mut out = Tensor4::zeros(out_shape);
    for n in 0..ps.n {
        for c in 0..ps.c {
            for oy in 0..ps.h {
                for ox in 0..ps.w {
                    let (y, x) = indices.source(n, c, oy, ox);
                    out.set(n, c, y, x, pooled.at(n, c, oy, ox));
                }
            }
        }
    }
    Ok(out)
}

/// Gathers the gradient at each recorded location.
pub fn max_unpool2d_backward<T: Scalar>(
    indices: &PoolIndices,
    dy: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let ps = indices.shape();
    let k = indices.window();
    dy.expect_shape(
        Shape4::new(ps.n, ps.c, ps.h * k, ps.w * k)?,
        "max_unpool2d_backward dy",
    )?;
    Ok(Tensor4::from_fn(ps, |n, c, oy, ox| {
        let (y, x) = indices.source(n, c, oy, ox);
        dy.at(n, c, y, x)
    }))
}

/// Average unpooling: every cell of each `k x k` output window holds the
/// pooled value divided by `k^2`.
pub fn avg_unpool2d<T: Scalar>(pooled: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("unpooling window must be >= 1".into()));
    }
    let ps = pooled.shape();
    let os = Shape4::new(ps.n, ps.c, ps.h * k, ps.w * k)?;
    let cells = T::of_f64((k * k) as f64);
    Ok(Tensor4::from_fn(os, |n, c, y, x| {
        pooled.at(n, c, y / k, x / k) / cells
    }))
}

#[cfg(test)]
mod tests {
    use super::super::pool::{avg_pool2d, maxpool2d};
    use super::*;

    #[test]
    fn value_lands_at_recorded_offset() {
        let x = Tensor4::<f32>::new([1, 1, 2, 2], vec![1.0, 7.0, 0.5, 2.0]);
        let (p, idx) = maxpool2d(&x, 2).unwrap();
        let u = max_unpool2d(&p, &idx, x.shape()).unwrap();
        assert_eq!(u.data(), &[0.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn average_spreads_evenly() {
        let p = Tensor4::<f32>::new([1, 1, 1, 1], vec![8.0]);
        assert_eq!(avg_unpool2d(&p, 2).unwrap().data(), &[2.0; 4]);
        // unpooling divides by k^2, so the identity pairs it with the window sum
        let c = Tensor4::<f64>::filled(Shape4::new(1, 2, 4, 4).unwrap(), 3.25);
        let mut window_sum = avg_pool2d(&c, 2).unwrap();
        window_sum.scale(4.0);
        let back = avg_unpool2d(&window_sum, 2).unwrap();
        assert!(back.bit_eq(&c));
        assert_eq!(back.sum(), window_sum.sum());
    }

    #[test]
    fn wrong_output_shape_rejected() {
        let x = Tensor4::<f32>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (p, idx) = maxpool2d(&x, 2).unwrap();
        assert!(max_unpool2d(&p, &idx, Shape4::new(1, 1, 4, 4).unwrap()).is_err());
    }
}
