//! Forward and backward kernels for the volumetric operator set.
//!
//! These are plain tensor functions; [`crate::autodiff::Tape`] records them.

mod axis;
mod conv;
mod elementwise;
mod loss;
mod pool;
mod upsample;

pub use conv::{conv3d, conv3d_backward, ConvGrads};
pub use elementwise::{
    activation, activation_backward, concat_backward, concat_channels, linear, linear_backward, mask_mul,
    sigmoid_scalar, Activation,
};
pub use loss::{
    binary_cross_entropy, binary_cross_entropy_backward, softmax_cross_entropy, softmax_cross_entropy_backward,
    voxel_cross_entropy, voxel_cross_entropy_backward, PROB_EPS,
};
pub use pool::{avgpool, avgpool_backward, global_max, global_max_backward, maxpool2, maxpool2_backward};
pub use upsample::{upsample2, upsample2_backward};
