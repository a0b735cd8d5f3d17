//! Primitive spatial operations on [`Tensor4`](crate::Tensor4).

mod concat;
mod conv;
mod pool;
mod unpool;
mod upsample;

pub use concat::{concat_channels, split_channels};
pub use conv::{
    conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward, ConvGrads, ConvSpec,
    DeconvSpec,
};
pub use pool::{
    avg_pool2d, avg_pool2d_backward, dilated_maxpool2d, dilated_maxpool2d_backward, maxpool2d,
    maxpool2d_backward, pool_gather, PoolIndices,
};
pub use unpool::{avg_unpool2d, max_unpool2d, max_unpool2d_backward};
pub use upsample::{
    bilinear_profile, make_bilinear_kernel, upsample_bilinear, upsample_bilinear_backward,
    upsample_spec,
};
