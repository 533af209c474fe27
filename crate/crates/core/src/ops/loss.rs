//! Scalar losses. Each returns the loss value and enough state for its backward.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities inside logarithms are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

fn clamp_prob<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::of(PROB_EPS);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Mean over the batch of `-log softmax(scores)[label]`; returns `(loss, softmax)`.
pub fn softmax_cross_entropy<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if scores.rank() != 2 || scores.dims()[1] < 2 || scores.dims()[0] != labels.len() {
        return Err(Error::shape("softmax_cross_entropy", scores.dims(), &[labels.len()]));
    }
    let (b, k) = (scores.dims()[0], scores.dims()[1]);
    let mut probs = Tensor::zeros(scores.dims());
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Argument(format!("label {label} out of range for {k} classes")));
        }
        let row = &scores.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&s| (s - max).exp()).sum();
        let lse = max + z.ln();
        total += lse - row[label];
        for (p, &s) in probs.data_mut()[i * k..(i + 1) * k].iter_mut().zip(row) {
            *p = (s - max).exp() / z;
        }
    }
    Ok((total / T::of(b as f64), probs))
}

pub fn softmax_cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], grad: T) -> Tensor<T> {
    let k = probs.dims()[1];
    let scale = grad / T::of(labels.len() as f64);
    let mut g = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        g.data_mut()[i * k + label] -= T::one();
        for v in &mut g.data_mut()[i * k..(i + 1) * k] {
            *v *= scale;
        }
    }
    g
}

/// Mean over every entry of the independent binary cross-entropy between
/// probabilities in `[0, 1]` and 0/1 targets.
pub fn binary_cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[T]) -> Result<T> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::shape("binary_cross_entropy", probs.dims(), &[targets.len()]));
    }
    let mut total = T::zero();
    for (&p, &y) in probs.data().iter().zip(targets) {
        let (pc, _) = clamp_prob(p);
        total -= y * pc.ln() + (T::one() - y) * (T::one() - pc).ln();
    }
    Ok(total / T::of(targets.len() as f64))
}

pub fn binary_cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, targets: &[T], grad: T) -> Tensor<T> {
    let scale = grad / T::of(targets.len() as f64);
    let data = probs
        .data()
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let (pc, clamped) = clamp_prob(p);
            if clamped {
                T::zero()
            } else {
                scale * (-y / pc + (T::one() - y) / (T::one() - pc))
            }
        })
        .collect();
    Tensor::new(probs.dims(), data).expect("bce grad dims")
}

/// Per-voxel class probability `s_label / sum_c s_c` over the branch maps
/// `seg[B, K, ...]`. Returns `(p, normalizer, clamped)`; a vanishing
/// normalizer or out-of-range `p` counts as clamped.
fn voxel_prob<T: Scalar>(seg: &[T], k: usize, s: usize, b: usize, v: usize, label: usize) -> (T, T, bool) {
    let z: T = (0..k).map(|c| seg[(b * k + c) * s + v]).sum();
    if z <= T::zero() {
        return (T::of(PROB_EPS), z, true);
    }
    let (p, clamped) = clamp_prob(seg[(b * k + label) * s + v] / z);
    (p, z, clamped)
}

fn check_voxel_ce<T: Scalar>(seg: &Tensor<T>, labels: &[usize], occ: &Tensor<T>) -> Result<usize> {
    let d = seg.dims();
    if d.len() < 3 || occ.dims()[0] != d[0] || occ.dims()[1] != 1 || occ.dims()[2..] != d[2..] {
        return Err(Error::shape("voxel_cross_entropy", d, occ.dims()));
    }
    if labels.len() != d[0] * seg.spatial_len() {
        return Err(Error::shape("voxel_cross_entropy labels", d, &[labels.len()]));
    }
    let occupied = occ.data().iter().filter(|&&o| o > T::zero()).count();
    if occupied == 0 {
        return Err(Error::Degenerate("no occupied voxels".into()));
    }
    Ok(occupied)
}

/// Mean over occupied voxels of `-log p(label)`, where per-voxel class
/// probabilities normalize the per-branch sigmoid maps.
pub fn voxel_cross_entropy<T: Scalar>(seg: &Tensor<T>, labels: &[usize], occ: &Tensor<T>) -> Result<T> {
    let occupied = check_voxel_ce(seg, labels, occ)?;
    let (b, k, s) = (seg.dims()[0], seg.dims()[1], seg.spatial_len());
    let mut total = T::zero();
    for bi in 0..b {
        for v in 0..s {
            if occ.data()[bi * s + v] <= T::zero() {
                continue;
            }
            let label = labels[bi * s + v];
            if label >= k {
                return Err(Error::Argument(format!("voxel label {label} >= branch count {k}")));
            }
            let (p, _, _) = voxel_prob(seg.data(), k, s, bi, v, label);
            total -= p.ln();
        }
    }
    Ok(total / T::of(occupied as f64))
}

pub fn voxel_cross_entropy_backward<T: Scalar>(
    seg: &Tensor<T>,
    labels: &[usize],
    occ: &Tensor<T>,
    grad: T,
) -> Result<Tensor<T>> {
    let occupied = check_voxel_ce(seg, labels, occ)?;
    let (b, k, s) = (seg.dims()[0], seg.dims()[1], seg.spatial_len());
    let scale = grad / T::of(occupied as f64);
    let mut g = Tensor::zeros(seg.dims());
    for bi in 0..b {
        for v in 0..s {
            if occ.data()[bi * s + v] <= T::zero() {
                continue;
            }
            let label = labels[bi * s + v];
            let (_, z, clamped) = voxel_prob(seg.data(), k, s, bi, v, label);
            if clamped {
                continue;
            }
            let sl = seg.data()[(bi * k + label) * s + v];
            for c in 0..k {
                let mut d = T::one() / z;
                if c == label {
                    d -= T::one() / sl;
                }
                g.data_mut()[(bi * k + c) * s + v] = scale * d;
            }
        }
    }
    Ok(g)
}
