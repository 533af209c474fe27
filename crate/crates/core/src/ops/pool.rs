//! Max, average and global-max pooling over `[B, C, D, H, W]` volumes.

use crate::error::{Error, Result};
use crate::ops::axis;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_volume(op: &'static str, t: &Tensor<impl Scalar>) -> Result<()> {
    if t.rank() != 5 {
        return Err(Error::shape(op, t.dims(), &[0; 5]));
    }
    Ok(())
}

/// Disjoint 2x2x2 max pooling. Also returns, per output voxel, the flat input
/// index of the selected voxel (lowest flat index among ties).
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    check_volume("maxpool3d", input)?;
    let d = input.dims();
    if d[2] % 2 != 0 || d[3] % 2 != 0 || d[4] % 2 != 0 {
        return Err(Error::shape("maxpool3d (odd extent)", d, &[d[0], d[1], 2, 2, 2]));
    }
    let (bc, x, y, z) = (d[0] * d[1], d[2], d[3], d[4]);
    let (ox, oy, oz) = (x / 2, y / 2, z / 2);
    let mut out = Tensor::zeros(&[d[0], d[1], ox, oy, oz]);
    let mut arg = vec![0usize; out.len()];
    let src = input.data();
    let dst = out.data_mut();
    let mut o = 0;
    for c in 0..bc {
        let base = c * x * y * z;
        for i in 0..ox {
            for j in 0..oy {
                for k in 0..oz {
                    let mut best = base + ((2 * i) * y + 2 * j) * z + 2 * k;
                    for di in 0..2 {
                        for dj in 0..2 {
                            for dk in 0..2 {
                                let idx = base + ((2 * i + di) * y + 2 * j + dj) * z + 2 * k + dk;
                                if src[idx] > src[best] {
                                    best = idx;
                                }
                            }
                        }
                    }
                    dst[o] = src[best];
                    arg[o] = best;
                    o += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward<T: Scalar>(in_dims: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = Tensor::zeros(in_dims);
    let gd = g.data_mut();
    for (&a, &v) in argmax.iter().zip(grad_out.data()) {
        gd[a] += v;
    }
    g
}

/// Stride-1, same-size average pooling with an in-bounds divisor.
pub fn avgpool<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    check_volume("avgpool3d", input)?;
    if k < 1 {
        return Err(Error::Argument("average pooling window must be >= 1".into()));
    }
    if k == 1 {
        return Ok(input.clone());
    }
    let mut t = input.clone();
    for ax in 2..5 {
        let n = t.dims()[ax];
        t = axis::apply(&t, ax, &axis::box_taps(n, k));
    }
    Ok(t)
}

pub fn avgpool_backward<T: Scalar>(grad_out: &Tensor<T>, k: usize) -> Tensor<T> {
    if k <= 1 {
        return grad_out.clone();
    }
    let mut g = grad_out.clone();
    for ax in (2..5).rev() {
        let n = g.dims()[ax];
        g = axis::apply_transpose(&g, ax, n, &axis::box_taps(n, k));
    }
    g
}

/// Per-(batch, channel) maximum over every trailing position, `[B, C, ...] -> [B, C]`.
/// Returns the flat index of the first maximum as well.
pub fn global_max<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    if input.rank() < 2 {
        return Err(Error::shape("global_max", input.dims(), &[0, 0]));
    }
    let (b, c, s) = (input.dims()[0], input.dims()[1], input.spatial_len());
    if s == 0 {
        return Err(Error::Degenerate("global max over an empty volume".into()));
    }
    let mut out = Tensor::zeros(&[b, c]);
    let mut arg = Vec::with_capacity(b * c);
    for (i, slot) in out.data_mut().iter_mut().enumerate() {
        let vals = &input.data()[i * s..(i + 1) * s];
        let mut best = 0;
        for (j, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = j;
            }
        }
        *slot = vals[best];
        arg.push(i * s + best);
    }
    Ok((out, arg))
}

pub fn global_max_backward<T: Scalar>(in_dims: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    maxpool2_backward(in_dims, argmax, grad_out)
}
