//! Mesh input, surface voxelization and the binvox file format.

pub mod binvox;
mod grid;
mod mesh;
mod raster;

pub use grid::VoxelGrid;
pub use mesh::{parse_obj, TriMesh};
pub use raster::{tight_fit, voxelize_surface, SAMPLE_SPACING};
