//! Fully convolutional networks for dense semantic labeling of aerial
//! imagery. A downsampling trunk is brought back to full resolution by naive
//! deconvolution, dilation, a max-unpooling decoder, skip connections, or a
//! per-pixel MLP over features pooled from every resolution.

pub mod arch;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{Scalar, Shape4, Tensor4};
