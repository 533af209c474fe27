//! Dense row-major tensors of up to five dimensions.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array, row-major with the first extent slowest.
///
/// Volumetric feature maps use the `[batch, channel, x, y, z]` convention.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 5 {
            return Err(Error::Argument(format!("tensor rank must be 1..=5, got {}", dims.len())));
        }
        if numel(dims) != data.len() {
            return Err(Error::Shape { op: "tensor", lhs: dims.to_vec(), rhs: vec![data.len()] });
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        Tensor { dims: dims.to_vec(), data: vec![value; numel(dims)] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { dims: vec![1], data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Tensor { dims: dims.to_vec(), data: (0..numel(dims)).map(&mut f).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Product of every extent after the first two (the spatial volume).
    pub fn spatial_len(&self) -> usize {
        numel(&self.dims[2.min(self.dims.len())..])
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        if numel(dims) != self.data.len() {
            return Err(Error::shape("reshape", &self.dims, dims));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Elementwise `self += other`; extents must agree.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape("add", &self.dims, &other.dims));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Channel slab `[start, start+count)` of a `[B, C, ...]` tensor.
    pub fn channels(&self, start: usize, count: usize) -> Result<Self> {
        if self.rank() < 2 || start + count > self.dims[1] {
            return Err(Error::Argument(format!(
                "channel range {start}..{} out of {:?}",
                start + count,
                self.dims
            )));
        }
        let (b, c, s) = (self.dims[0], self.dims[1], self.spatial_len());
        let mut dims = self.dims.clone();
        dims[1] = count;
        let mut data = Vec::with_capacity(b * count * s);
        for bi in 0..b {
            let base = (bi * c + start) * s;
            data.extend_from_slice(&self.data[base..base + count * s]);
        }
        Ok(Tensor { dims, data })
    }

    /// Item `index` of the leading (batch) axis, keeping a unit batch extent.
    pub fn batch_item(&self, index: usize) -> Self {
        let per = self.data.len() / self.dims[0];
        let mut dims = self.dims.clone();
        dims[0] = 1;
        Tensor { dims, data: self.data[index * per..(index + 1) * per].to_vec() }
    }

    /// Concatenate tensors with identical trailing extents along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Argument("stack of zero tensors".into()))?;
        let mut dims = first.dims.clone();
        let mut data = Vec::new();
        dims[0] = 0;
        for t in items {
            if t.dims[1..] != first.dims[1..] {
                return Err(Error::shape("stack_batch", &first.dims, &t.dims));
            }
            dims[0] += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { dims, data })
    }
}

/// Zero extents are permitted so that an empty channel block can be concatenated.
pub(crate) fn same_spatial(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a[0] == b[0] && a[2..] == b[2..]
}
