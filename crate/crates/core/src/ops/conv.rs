//! Same-padded 3D cross-correlation lowered to GEMM via im2col over chunks of
//! output lines (one line = fixed depth and row, all columns).
//!
//! Window for output voxel `v` along an axis covers `[v - k/2, v - k/2 + k)`,
//! so odd kernels are centred and even kernels pad one more voxel on the low side.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatLayout, Scalar};
use crate::tensor::Tensor;

/// Target im2col buffer elements per chunk; small enough to stay cache resident.
const COL_BUDGET: usize = 1 << 17;

#[derive(Clone, Copy, Debug)]
struct Geom {
    cin: usize,
    cout: usize,
    k: usize,
    /// Low-side padding; the window of output voxel `v` is `[v - pad, v - pad + k)`.
    pad: usize,
    d: usize,
    h: usize,
    w: usize,
}

impl Geom {
    fn taps(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn vol(&self) -> usize {
        self.d * self.h * self.w
    }

    fn lines(&self) -> usize {
        self.d * self.h
    }

    fn chunk_lines(&self) -> usize {
        (COL_BUDGET / (self.taps() * self.w).max(1)).clamp(1, self.lines().max(1))
    }
}

fn geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Geom> {
    let (id, wd) = (input.dims(), weight.dims());
    if id.len() != 5 || wd.len() != 5 {
        return Err(Error::shape("conv3d", id, wd));
    }
    let k = wd[2];
    if k == 0 || wd[3] != k || wd[4] != k || wd[1] != id[1] {
        return Err(Error::shape("conv3d", id, wd));
    }
    if bias.dims() != [wd[0]] {
        return Err(Error::shape("conv3d bias", bias.dims(), &wd[..1]));
    }
    Ok(Geom { cin: id[1], cout: wd[0], k, pad: k / 2, d: id[2], h: id[3], w: id[4] })
}

/// Fill `col[K, nl*W]` for output lines `l0..l0+nl` of one batch item.
fn im2col<T: Scalar>(g: &Geom, input: &[T], l0: usize, nl: usize, col: &mut [T]) {
    let pad = g.pad as isize;
    let ncols = nl * g.w;
    let mut r = 0;
    for ci in 0..g.cin {
        let src = &input[ci * g.vol()..(ci + 1) * g.vol()];
        for kd in 0..g.k {
            for kh in 0..g.k {
                for kw in 0..g.k {
                    let row = &mut col[r * ncols..(r + 1) * ncols];
                    let shift = kw as isize - pad;
                    let lo = (-shift).clamp(0, g.w as isize) as usize;
                    let hi = (g.w as isize - shift).clamp(0, g.w as isize) as usize;
                    for li in 0..nl {
                        let (od, oh) = ((l0 + li) / g.h, (l0 + li) % g.h);
                        let iz = od as isize + kd as isize - pad;
                        {
                            let iy = oh as isize + kh as isize - pad;
                            let dst = &mut row[li * g.w..(li + 1) * g.w];
                            if iz < 0 || iz >= g.d as isize || iy < 0 || iy >= g.h as isize || lo >= hi {
                                dst.fill(T::zero());
                                continue;
                            }
                            let base = (iz as usize * g.h + iy as usize) * g.w;
                            dst[..lo].fill(T::zero());
                            let s0 = (base as isize + lo as isize + shift) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                            dst[hi..].fill(T::zero());
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// `[Cin, Cout, k, k, k]` kernel with every spatial axis reversed; correlating
/// the output gradient with it yields the input gradient.
fn flipped_transpose<T: Scalar>(g: &Geom, weight: &[T]) -> Vec<T> {
    let k3 = g.k * g.k * g.k;
    let mut out = vec![T::zero(); weight.len()];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            let src = &weight[(co * g.cin + ci) * k3..][..k3];
            let dst = &mut out[(ci * g.cout + co) * k3..][..k3];
            for (t, &v) in src.iter().enumerate() {
                dst[k3 - 1 - t] = v;
            }
        }
    }
    out
}

fn forward_item<T: Scalar>(g: &Geom, input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let nl_max = g.chunk_lines();
    let mut col = vec![T::zero(); g.taps() * nl_max * g.w];
    let mut l0 = 0;
    while l0 < g.lines() {
        let nl = nl_max.min(g.lines() - l0);
        let ncols = nl * g.w;
        let col = &mut col[..g.taps() * ncols];
        im2col(g, input, l0, nl, col);
        let off = l0 * g.w;
        gemm(
            T::one(),
            weight,
            MatLayout::row_major(g.cout, g.taps()),
            col,
            MatLayout::row_major(g.taps(), ncols),
            T::zero(),
            &mut out[off..],
            MatLayout { rows: g.cout, cols: ncols, row_stride: g.vol(), col_stride: 1 },
        );
        l0 += nl;
    }
    for (co, &b) in bias.iter().enumerate() {
        for v in &mut out[co * g.vol()..(co + 1) * g.vol()] {
            *v += b;
        }
    }
}

/// Same-padded 3D convolution: `[B,Cin,D,H,W] * [Cout,Cin,k,k,k] + [Cout]`.
pub fn conv3d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input, weight, bias)?;
    let b = input.dims()[0];
    let mut out = Tensor::zeros(&[b, g.cout, g.d, g.h, g.w]);
    let in_item = g.cin * g.vol();
    let out_item = g.cout * g.vol();
    if in_item == 0 || out_item == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(out_item)
        .zip(input.data().par_chunks(in_item))
        .for_each(|(o, x)| forward_item(&g, x, weight.data(), bias.data(), o));
    Ok(out)
}

/// Gradients of [`conv3d`] with respect to input (optional), weight and bias.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, bias)?;
    let b = input.dims()[0];
    if grad_out.dims() != [b, g.cout, g.d, g.h, g.w] {
        return Err(Error::shape("conv3d backward", grad_out.dims(), input.dims()));
    }
    let in_item = g.cin * g.vol();
    let out_item = g.cout * g.vol();
    let nl_max = g.chunk_lines();
    let back = Geom { cin: g.cout, cout: g.cin, pad: g.k - 1 - g.pad, ..g };
    let wt = if want_input { flipped_transpose(&g, weight.data()) } else { vec![] };
    let zero_bias = vec![T::zero(); g.cin];

    let per_item: Vec<(Option<Vec<T>>, Vec<T>, Vec<T>)> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let x = &input.data()[bi * in_item..(bi + 1) * in_item];
            let go = &grad_out.data()[bi * out_item..(bi + 1) * out_item];
            let mut gw = vec![T::zero(); weight.len()];
            let gx = want_input.then(|| {
                let mut gx = vec![T::zero(); in_item];
                forward_item(&back, go, &wt, &zero_bias, &mut gx);
                gx
            });
            let gb: Vec<T> = (0..g.cout)
                .map(|co| go[co * g.vol()..(co + 1) * g.vol()].iter().copied().sum())
                .collect();
            let mut col = vec![T::zero(); g.taps() * nl_max * g.w];
            let mut l0 = 0;
            while l0 < g.lines() {
                let nl = nl_max.min(g.lines() - l0);
                let ncols = nl * g.w;
                let col = &mut col[..g.taps() * ncols];
                let go_chunk = &go[l0 * g.w..];
                let go_layout = MatLayout { rows: g.cout, cols: ncols, row_stride: g.vol(), col_stride: 1 };
                im2col(&g, x, l0, nl, col);
                gemm(
                    T::one(),
                    go_chunk,
                    go_layout,
                    col,
                    MatLayout::transposed(g.taps(), ncols),
                    T::one(),
                    &mut gw,
                    MatLayout::row_major(g.cout, g.taps()),
                );
                l0 += nl;
            }
            (gx, gw, gb)
        })
        .collect();

    let mut gw = Tensor::zeros(weight.dims());
    let mut gb = Tensor::zeros(bias.dims());
    let mut gx = want_input.then(|| Vec::with_capacity(input.len()));
    for (x, w, bb) in per_item {
        for (a, v) in gw.data_mut().iter_mut().zip(w) {
            *a += v;
        }
        for (a, v) in gb.data_mut().iter_mut().zip(bb) {
            *a += v;
        }
        if let (Some(acc), Some(x)) = (gx.as_mut(), x) {
            acc.extend(x);
        }
    }
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::new(input.dims(), d)).transpose()?,
        weight: gw,
        bias: gb,
    })
}
