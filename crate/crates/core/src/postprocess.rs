//! Reflection-symmetry detection, map symmetrization and thresholding.

use std::fmt;

use crate::error::{Error, Result};
use crate::segmap::SegMap;
use crate::voxel::VoxelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(["x", "y", "z"][self.index()])
    }
}

/// Plane `coord = position` in voxel-index units (voxel `c` has centre `c`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetryPlane {
    pub axis: Axis,
    /// A multiple of one half.
    pub position: f64,
    /// Fraction of occupied voxels whose mirror is occupied.
    pub score: f64,
}

impl SymmetryPlane {
    /// Mirror of coordinate `c` along the plane axis, if inside `[0, n)`.
    pub fn mirror(&self, c: usize, n: usize) -> Option<usize> {
        let m = (2.0 * self.position).round() as i64 - c as i64;
        (0..n as i64).contains(&m).then_some(m as usize)
    }

    fn mirror_voxel(&self, v: [usize; 3], n: usize) -> Option<[usize; 3]> {
        let a = self.axis.index();
        let mut out = v;
        out[a] = self.mirror(v[a], n)?;
        Some(out)
    }
}

fn mirror_score(grid: &VoxelGrid, axis: Axis, position: f64) -> f64 {
    let plane = SymmetryPlane { axis, position, score: 0.0 };
    let n = grid.res();
    let total = grid.count();
    let matched = grid
        .occupied()
        .filter(|&i| plane.mirror_voxel(grid.coords(i), n).is_some_and(|[x, y, z]| grid.get(x, y, z)))
        .count();
    matched as f64 / total as f64
}

/// Best axis-aligned reflection plane through the occupancy centroid
/// (rounded to the nearest half voxel); ties prefer x, then y, then z.
pub fn detect_symmetry_plane(grid: &VoxelGrid) -> Result<SymmetryPlane> {
    let count = grid.count();
    if count == 0 {
        return Err(Error::Degenerate("symmetry of an empty grid".into()));
    }
    let mut sum = [0u64; 3];
    for i in grid.occupied() {
        let c = grid.coords(i);
        for a in 0..3 {
            sum[a] += c[a] as u64;
        }
    }
    let mut best: Option<SymmetryPlane> = None;
    for axis in Axis::ALL {
        let mean = sum[axis.index()] as f64 / count as f64;
        let position = (2.0 * mean).round() / 2.0;
        let score = mirror_score(grid, axis, position);
        if best.map_or(true, |b| score > b.score) {
            best = Some(SymmetryPlane { axis, position, score });
        }
    }
    Ok(best.expect("three axes evaluated"))
}

/// `max(map(v), map(mirror v))`, re-masked by `occupancy`.
pub fn symmetrize_map(map: &SegMap, plane: &SymmetryPlane, occupancy: &VoxelGrid) -> Result<SegMap> {
    map.check_grid(occupancy)?;
    let n = map.res();
    let mut out = SegMap::zeros(n);
    for i in occupancy.occupied() {
        let v = map.get(i);
        let m = plane.mirror_voxel(occupancy.coords(i), n).map(|[x, y, z]| map.get(occupancy.index(x, y, z))).unwrap_or(0.0);
        out.values_mut()[i] = v.max(m);
    }
    Ok(out)
}

/// Occupied voxels with `map > t`.
pub fn threshold_map(map: &SegMap, t: f64, occupancy: &VoxelGrid) -> Result<VoxelGrid> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Argument(format!("threshold {t} outside [0,1]")));
    }
    map.check_grid(occupancy)?;
    let mut out = VoxelGrid::empty(map.res());
    out.translate = occupancy.translate;
    out.scale = occupancy.scale;
    for i in occupancy.occupied() {
        if map.get(i) as f64 > t {
            out.set_index(i, true);
        }
    }
    Ok(out)
}
