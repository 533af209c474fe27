use crate::error::{Error, Result};
use crate::ops::axis;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Align-corners trilinear upsampling by a factor of two: output coordinate
/// `u` samples the input at `u * (n - 1) / (2n - 1)`.
pub fn upsample2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 5 {
        return Err(Error::shape("upsample_trilinear", input.dims(), &[0; 5]));
    }
    let mut t = input.clone();
    for ax in 2..5 {
        let n = t.dims()[ax];
        t = axis::apply(&t, ax, &axis::upsample_taps(n));
    }
    Ok(t)
}

pub fn upsample2_backward<T: Scalar>(in_dims: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for ax in (2..5).rev() {
        let n = in_dims[ax];
        g = axis::apply_transpose(&g, ax, n, &axis::upsample_taps(n));
    }
    g
}
