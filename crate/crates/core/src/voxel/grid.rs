use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Binary occupancy cube of `n^3` voxels plus its placement in world space.
///
/// Voxel `(x, y, z)` is stored at `x*n*n + y*n + z`; its world-space lower
/// corner is `translate + scale * (x, y, z) / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    n: usize,
    bits: Vec<u8>,
    pub translate: [f64; 3],
    pub scale: f64,
}

impl VoxelGrid {
    pub fn empty(n: usize) -> Self {
        VoxelGrid { n, bits: vec![0; n * n * n], translate: [0.0; 3], scale: 1.0 }
    }

    pub fn from_bits(n: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != n * n * n {
            return Err(Error::shape("voxel grid", &[n, n, n], &[bits.len()]));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Invariant("occupancy must be 0 or 1".into()));
        }
        Ok(VoxelGrid { n, bits, translate: [0.0; 3], scale: 1.0 })
    }

    pub fn res(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.n + y) * self.n + z
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        [i / (self.n * self.n), (i / self.n) % self.n, i % self.n]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, on: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = on as u8;
    }

    pub fn set_index(&mut self, i: usize, on: bool) {
        self.bits[i] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i)
    }

    /// `true` when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &VoxelGrid) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    pub fn intersection(&self, other: &VoxelGrid) -> VoxelGrid {
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a & b).collect();
        VoxelGrid { n: self.n, bits, translate: self.translate, scale: self.scale }
    }

    /// World-space center of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let h = self.scale / self.n as f64;
        [
            self.translate[0] + (x as f64 + 0.5) * h,
            self.translate[1] + (y as f64 + 0.5) * h,
            self.translate[2] + (z as f64 + 0.5) * h,
        ]
    }

    /// `[1, 1, n, n, n]` tensor of 0/1 values.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let n = self.n;
        Tensor::new(&[1, 1, n, n, n], self.bits.iter().map(|&b| if b != 0 { T::one() } else { T::zero() }).collect())
            .expect("grid tensor dims")
    }

    /// Apply a permutation/reflection of the axes: output voxel `v` takes the
    /// value at `map(v)`.
    pub fn remap(&self, map: impl Fn([usize; 3]) -> [usize; 3]) -> VoxelGrid {
        let mut out = VoxelGrid { bits: vec![0; self.bits.len()], ..self.clone() };
        for i in 0..self.bits.len() {
            let [x, y, z] = map(self.coords(i));
            out.bits[i] = self.bits[self.index(x, y, z)];
        }
        out
    }
}
