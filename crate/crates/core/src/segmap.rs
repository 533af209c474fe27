//! Per-voxel probability maps aligned with an `n³` occupancy grid, and the
//! `.seg` file format:
//!
//! ```text
//! #seg 1
//! dim n
//! maps name1 name2 ...
//! data
//! <little-endian f32 values, map-major, voxel order as VoxelGrid>
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::voxel::VoxelGrid;

/// One scalar field over an `n³` grid (voxel index `x*n² + y*n + z`).
#[derive(Clone, Debug, PartialEq)]
pub struct SegMap {
    n: usize,
    values: Vec<f32>,
}

impl SegMap {
    pub fn new(n: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * n * n {
            return Err(Error::shape("segmentation map", &[values.len()], &[n * n * n]));
        }
        Ok(SegMap { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        SegMap { n, values: vec![0.0; n * n * n] }
    }

    /// Channel `c` of batch item `b` of a `[B,C,n,n,n]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, b: usize, c: usize) -> Result<Self> {
        let d = t.dims();
        if d.len() != 5 || d[2] != d[3] || d[3] != d[4] || b >= d[0] || c >= d[1] {
            return Err(Error::shape("segmentation map", d, &[b + 1, c + 1, 0, 0, 0]));
        }
        let s = t.spatial_len();
        let off = (b * d[1] + c) * s;
        Ok(SegMap { n: d[2], values: t.data()[off..off + s].iter().map(|v| v.to_f32().unwrap_or(0.0)).collect() })
    }

    pub fn res(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, i: usize) -> f32 {
        self.values[i]
    }

    /// Zero outside the occupied voxels of `grid`.
    pub fn masked(&self, grid: &VoxelGrid) -> Result<Self> {
        self.check_grid(grid)?;
        Ok(SegMap {
            n: self.n,
            values: self.values.iter().zip(grid.bits()).map(|(&v, &b)| if b != 0 { v } else { 0.0 }).collect(),
        })
    }

    pub(crate) fn check_grid(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.res() != self.n {
            return Err(Error::shape("map vs grid", &[self.n; 3], &[grid.res(); 3]));
        }
        Ok(())
    }
}

/// Named maps sharing one resolution.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SegFile {
    pub maps: Vec<(String, SegMap)>,
}

impl SegFile {
    pub fn get(&self, name: &str) -> Option<&SegMap> {
        self.maps.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let n = self.maps.first().map(|(_, m)| m.n).ok_or_else(|| Error::Argument("no maps to write".into()))?;
        if self.maps.iter().any(|(name, m)| m.n != n || name.is_empty() || name.contains(char::is_whitespace)) {
            return Err(Error::Argument("maps must share one resolution and have non-blank names".into()));
        }
        let names: Vec<&str> = self.maps.iter().map(|(s, _)| s.as_str()).collect();
        let mut out = format!("#seg 1\ndim {n}\nmaps {}\ndata\n", names.join(" ")).into_bytes();
        for (_, m) in &self.maps {
            for v in &m.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> Result<String> {
            let end = bytes[*pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or(Error::Format { offset: *pos, msg: "truncated header".into() })?;
            let line = String::from_utf8_lossy(&bytes[*pos..*pos + end]).trim().to_string();
            *pos += end + 1;
            Ok(line)
        };
        let bad = |offset: usize, msg: &str| Error::Format { offset, msg: msg.to_string() };
        if next_line(&mut pos)? != "#seg 1" {
            return Err(bad(0, "bad magic"));
        }
        let at = pos;
        let dim = next_line(&mut pos)?;
        let n: usize = dim
            .strip_prefix("dim ")
            .and_then(|s| s.trim().parse().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| bad(at, "expected dim n"))?;
        let at = pos;
        let maps = next_line(&mut pos)?;
        let names: Vec<String> = maps
            .strip_prefix("maps")
            .ok_or_else(|| bad(at, "expected maps line"))?
            .split_whitespace()
            .map(String::from)
            .collect();
        if names.is_empty() {
            return Err(bad(at, "no map names"));
        }
        let at = pos;
        if next_line(&mut pos)? != "data" {
            return Err(bad(at, "expected data"));
        }
        let per = n * n * n;
        let need = names.len() * per * 4;
        let body = &bytes[pos..];
        if body.len() < need {
            return Err(bad(bytes.len(), "truncated data"));
        }
        if body.len() > need {
            return Err(bad(pos + need, "trailing bytes"));
        }
        let mut out = SegFile::default();
        for (k, name) in names.into_iter().enumerate() {
            let values = body[k * per * 4..(k + 1) * per * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.maps.push((name, SegMap { n, values }));
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }
}
