use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    dy.expect_shape(x.shape(), "relu_backward dy")?;
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    Ok(dx)
}
