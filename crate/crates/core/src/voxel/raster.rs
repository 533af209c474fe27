//! Surface voxelization by barycentric supersampling.

use crate::error::{Error, Result};
use crate::voxel::{TriMesh, VoxelGrid};

/// Maximum lattice spacing, in voxel edges, between surface samples.
pub const SAMPLE_SPACING: f64 = 0.25;

/// Cube placement that tightly fits a bounding box: the longest extent spans
/// the grid and shorter axes are centred.
pub fn tight_fit(lo: [f64; 3], hi: [f64; 3]) -> Result<([f64; 3], f64)> {
    let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let edge = ext.iter().copied().fold(0.0, f64::max);
    if !(edge > 0.0) || !edge.is_finite() {
        return Err(Error::Degenerate("zero-extent bounding box".into()));
    }
    let origin = [
        lo[0] - (edge - ext[0]) / 2.0,
        lo[1] - (edge - ext[1]) / 2.0,
        lo[2] - (edge - ext[2]) / 2.0,
    ];
    Ok((origin, edge))
}

/// Voxel containing a grid-unit coordinate under half-open `[i, i+1)` cells;
/// the far boundary of the cube belongs to the last voxel.
#[inline]
fn cell(u: f64, n: usize) -> usize {
    (u.floor().max(0.0) as usize).min(n - 1)
}

/// Set every voxel that contains a point of some triangle.
pub fn voxelize_surface(mesh: &TriMesh, n: usize) -> Result<VoxelGrid> {
    if n == 0 {
        return Err(Error::Argument("resolution must be positive".into()));
    }
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::Degenerate("mesh has no triangles".into()))?;
    let (origin, edge) = tight_fit(lo, hi)?;
    let to_grid = |p: [f64; 3]| {
        let s = n as f64 / edge;
        [(p[0] - origin[0]) * s, (p[1] - origin[1]) * s, (p[2] - origin[2]) * s]
    };
    let mut grid = VoxelGrid::empty(n);
    grid.translate = origin;
    grid.scale = edge;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| to_grid(mesh.vertices[i]));
        let len = |p: [f64; 3], q: [f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        let longest = len(a, b).max(len(b, c)).max(len(a, c));
        let steps = ((longest / SAMPLE_SPACING).ceil() as usize).max(1);
        let inv = 1.0 / steps as f64;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let (u, v) = (i as f64 * inv, j as f64 * inv);
                let p = [
                    a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
                    a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
                    a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]),
                ];
                grid.set(cell(p[0], n), cell(p[1], n), cell(p[2], n), true);
            }
        }
    }
    Ok(grid)
}
