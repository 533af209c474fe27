use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{same_spatial, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => input.map(sigmoid_scalar),
    }
}

/// Backward of [`activation`] given the forward input and output.
pub fn activation_backward<T: Scalar>(
    kind: Activation,
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let data = match kind {
        Activation::Relu => input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::Sigmoid => output
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (T::one() - s))
            .collect(),
    };
    Tensor::new(input.dims(), data).expect("activation grad dims")
}

/// Concatenate along axis 1: `a` occupies channels `[0, Ca)`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || !same_spatial(a.dims(), b.dims()) {
        return Err(Error::shape("concat_channels", a.dims(), b.dims()));
    }
    let (n, ca, cb, s) = (a.dims()[0], a.dims()[1], b.dims()[1], a.spatial_len());
    let mut dims = a.dims().to_vec();
    dims[1] = ca + cb;
    let mut data = Vec::with_capacity(n * (ca + cb) * s);
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * s..(i + 1) * ca * s]);
        data.extend_from_slice(&b.data()[i * cb * s..(i + 1) * cb * s]);
    }
    Tensor::new(&dims, data)
}

/// Split a channel-concatenated gradient back into its `(a, b)` parts.
pub fn concat_backward<T: Scalar>(grad: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let cb = grad.dims()[1] - ca;
    (grad.channels(0, ca).expect("concat split"), grad.channels(ca, cb).expect("concat split"))
}

fn check_mask<T: Scalar>(seg: &Tensor<T>, occ: &Tensor<T>) -> Result<()> {
    if seg.rank() < 2 || occ.rank() != seg.rank() || occ.dims()[1] != 1 || !same_spatial(seg.dims(), occ.dims()) {
        return Err(Error::shape("mask_mul", seg.dims(), occ.dims()));
    }
    Ok(())
}

/// Multiply every channel of `seg` by the single-channel occupancy `occ`.
pub fn mask_mul<T: Scalar>(seg: &Tensor<T>, occ: &Tensor<T>) -> Result<Tensor<T>> {
    check_mask(seg, occ)?;
    let (n, c, s) = (seg.dims()[0], seg.dims()[1], seg.spatial_len());
    let mut out = seg.clone();
    let d = out.data_mut();
    for i in 0..n {
        let m = &occ.data()[i * s..(i + 1) * s];
        for ch in 0..c {
            let row = &mut d[(i * c + ch) * s..(i * c + ch + 1) * s];
            for (v, &w) in row.iter_mut().zip(m) {
                *v *= w;
            }
        }
    }
    Ok(out)
}

/// `[B, N] x [M, N]^T + [M] -> [B, M]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (id, wd) = (input.dims(), weight.dims());
    if id.len() != 2 || wd.len() != 2 || id[1] != wd[1] || bias.dims() != [wd[0]] {
        return Err(Error::shape("fully_connected", id, wd));
    }
    let (b, n, m) = (id[0], id[1], wd[0]);
    let mut out = Tensor::zeros(&[b, m]);
    for i in 0..b {
        let x = &input.data()[i * n..(i + 1) * n];
        for j in 0..m {
            let w = &weight.data()[j * n..(j + 1) * n];
            let dot: T = x.iter().zip(w).map(|(&a, &c)| a * c).sum();
            out.data_mut()[i * m + j] = dot + bias.data()[j];
        }
    }
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, n, m) = (input.dims()[0], input.dims()[1], weight.dims()[0]);
    let mut gx = Tensor::zeros(input.dims());
    let mut gw = Tensor::zeros(weight.dims());
    let mut gb = Tensor::zeros(&[m]);
    for i in 0..b {
        for j in 0..m {
            let g = grad_out.data()[i * m + j];
            gb.data_mut()[j] += g;
            for p in 0..n {
                gx.data_mut()[i * n + p] += g * weight.data()[j * n + p];
                gw.data_mut()[j * n + p] += g * input.data()[i * n + p];
            }
        }
    }
    (gx, gw, gb)
}
