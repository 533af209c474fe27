//! Separable per-axis linear maps shared by trilinear upsampling and box averaging.

use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Sparse row of a 1D linear map: `(source index, weight)` pairs.
pub(crate) type Taps<T> = Vec<(usize, T)>;

/// Apply `out[.., u, ..] = sum_j w_j * in[.., src_j, ..]` along `axis`.
pub(crate) fn apply<T: Scalar>(input: &Tensor<T>, axis: usize, rows: &[Taps<T>]) -> Tensor<T> {
    let dims = input.dims();
    let n = dims[axis];
    let outer = numel(&dims[..axis]);
    let inner = numel(&dims[axis + 1..]);
    let m = rows.len();
    let mut out_dims = dims.to_vec();
    out_dims[axis] = m;
    let mut out = Tensor::zeros(&out_dims);
    let src = input.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for (u, taps) in rows.iter().enumerate() {
            let drow = &mut dst[(o * m + u) * inner..(o * m + u + 1) * inner];
            for &(s, w) in taps {
                let srow = &src[(o * n + s) * inner..(o * n + s + 1) * inner];
                for (a, &b) in drow.iter_mut().zip(srow) {
                    *a += w * b;
                }
            }
        }
    }
    out
}

/// Transpose of [`apply`]: scatter `grad` (extent `rows.len()` on `axis`) back to extent `n`.
pub(crate) fn apply_transpose<T: Scalar>(grad: &Tensor<T>, axis: usize, n: usize, rows: &[Taps<T>]) -> Tensor<T> {
    let dims = grad.dims();
    let m = rows.len();
    let outer = numel(&dims[..axis]);
    let inner = numel(&dims[axis + 1..]);
    let mut in_dims = dims.to_vec();
    in_dims[axis] = n;
    let mut out = Tensor::zeros(&in_dims);
    let src = grad.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for (u, taps) in rows.iter().enumerate() {
            let grow = &src[(o * m + u) * inner..(o * m + u + 1) * inner];
            for &(s, w) in taps {
                let drow = &mut dst[(o * n + s) * inner..(o * n + s + 1) * inner];
                for (a, &b) in drow.iter_mut().zip(grow) {
                    *a += w * b;
                }
            }
        }
    }
    out
}

/// Align-corners linear interpolation from extent `n` to `2n`.
pub(crate) fn upsample_taps<T: Scalar>(n: usize) -> Vec<Taps<T>> {
    let m = 2 * n;
    (0..m)
        .map(|u| {
            if n == 1 {
                return vec![(0, T::one())];
            }
            let x = (u * (n - 1)) as f64 / (m - 1) as f64;
            let i0 = (x.floor() as usize).min(n - 2);
            let f = x - i0 as f64;
            let mut taps = vec![(i0, T::of(1.0 - f))];
            if f > 0.0 {
                taps.push((i0 + 1, T::of(f)));
            }
            taps
        })
        .collect()
}

/// Stride-1 box mean with window `[u - k/2, u - k/2 + k)` clipped to `[0, n)`.
pub(crate) fn box_taps<T: Scalar>(n: usize, k: usize) -> Vec<Taps<T>> {
    (0..n)
        .map(|u| {
            let lo = u.saturating_sub(k / 2);
            let hi = (u + k - k / 2).min(n);
            let w = T::one() / T::of((hi - lo) as f64);
            (lo..hi).map(|s| (s, w)).collect()
        })
        .collect()
}
