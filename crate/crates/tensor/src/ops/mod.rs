//! Differentiable ops. Each returns a fresh tensor whose backward rule is
//! recorded when any input requires a gradient.

mod conv;
mod elementwise;
mod pool;
mod shape;
mod upsample;

pub use conv::{conv2d, conv2d_reference, Conv2dOpts};
pub use elementwise::{add, dot, linear_combination, relu, scale, sum};
pub use pool::maxpool2x2;
pub use shape::{cat_channels, concat_channels, narrow_channels};
pub use upsample::{upsample_bilinear2x, upsample_weights};

use crate::{Result, Scalar, Tensor, TensorError};

pub(crate) fn expect_nchw<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(TensorError::shape(op, format!("expected NCHW, got {:?}", t.shape()))),
    }
}
