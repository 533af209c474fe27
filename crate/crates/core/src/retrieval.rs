//! Part-sensitive shape distances, ranked search, distance-matrix export and
//! highlighted point-cloud thumbnails.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::segmap::SegMap;
use crate::voxel::VoxelGrid;

/// Voxel centres (grid units, voxel `c` spans `[c, c+1)`) whose map value
/// exceeds a threshold, weighted by that value.
#[derive(Clone, Debug, PartialEq)]
pub struct SalientSet {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub centroid: [f64; 3],
}

impl SalientSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn extract_salient(map: &SegMap, grid: &VoxelGrid, threshold: f64) -> Result<SalientSet> {
    map.check_grid(grid)?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in grid.occupied() {
        let w = map.get(i) as f64;
        if w > threshold {
            let c = grid.coords(i);
            points.push([c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5]);
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    let mut centroid = [0.0; 3];
    if total > 0.0 {
        for (p, w) in points.iter().zip(&weights) {
            for a in 0..3 {
                centroid[a] += p[a] * w / total;
            }
        }
    }
    Ok(SalientSet { points, weights, centroid })
}

fn directed(a: &SalientSet, b: &SalientSet, shift: [f64; 3]) -> f64 {
    let total: f64 = a.weights.iter().sum();
    let sum: f64 = a
        .points
        .iter()
        .zip(&a.weights)
        .map(|(p, w)| {
            let best = b
                .points
                .iter()
                .map(|q| {
                    let d = [p[0] - q[0] - shift[0], p[1] - q[1] - shift[1], p[2] - q[2] - shift[2]];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                })
                .fold(f64::INFINITY, f64::min);
            w * best.sqrt()
        })
        .sum();
    sum / total
}

/// Symmetric weighted nearest-neighbour distance after aligning centroids.
pub fn part_distance(a: &SalientSet, b: &SalientSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::NoPart("part distance needs two nonempty salient sets".into()));
    }
    let shift = [a.centroid[0] - b.centroid[0], a.centroid[1] - b.centroid[1], a.centroid[2] - b.centroid[2]];
    let neg = [-shift[0], -shift[1], -shift[2]];
    Ok(0.5 * (directed(a, b, shift) + directed(b, a, neg)))
}

/// Top `k` corpus entries nearest to `query` (ascending, ties by id); shapes
/// without a salient region are skipped.
pub fn rank_search(query: &str, corpus: &[(String, SalientSet)], k: usize) -> Result<Vec<(String, f64)>> {
    let q = &corpus
        .iter()
        .find(|(id, _)| id == query)
        .ok_or_else(|| Error::Argument(format!("query {query:?} not in corpus")))?
        .1;
    if q.is_empty() {
        return Err(Error::NoPart(format!("query {query:?} has no salient region; is the tag present on this shape?")));
    }
    let mut ranked: Vec<(String, f64)> = corpus
        .par_iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(id, s)| part_distance(q, s).map(|d| (id.clone(), d)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub ids: Vec<String>,
    /// Row-major `ids.len()²`.
    pub values: Vec<f64>,
    /// Shapes left out for lacking a salient region.
    pub excluded: Vec<String>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    /// First line the ids, then one comma-separated row per id.
    pub fn to_text(&self) -> String {
        let mut s = self.ids.join(",");
        s.push('\n');
        let n = self.ids.len();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.get(i, j))).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn exclusions_text(&self) -> String {
        self.excluded.iter().map(|id| format!("{id}\n")).collect()
    }
}

pub fn distance_matrix(corpus: &[(String, SalientSet)]) -> Result<DistanceMatrix> {
    let (kept, dropped): (Vec<_>, Vec<_>) = corpus.iter().partition(|(_, s)| !s.is_empty());
    let n = kept.len();
    let upper: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            if i < j {
                part_distance(&kept[i].1, &kept[j].1)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            values[i * n + j] = upper[i * n + j];
            values[j * n + i] = upper[i * n + j];
        }
    }
    Ok(DistanceMatrix {
        ids: kept.iter().map(|(id, _)| id.clone()).collect(),
        values,
        excluded: dropped.iter().map(|(id, _)| id.clone()).collect(),
    })
}

pub const HIGHLIGHT: [u8; 3] = [255, 0, 0];
pub const NEUTRAL: [u8; 3] = [211, 211, 211];

/// ASCII PLY cloud of occupied voxel centres in world coordinates, salient
/// voxels highlighted.
pub fn export_thumbnail(grid: &VoxelGrid, mask: &VoxelGrid) -> Result<String> {
    if mask.res() != grid.res() || !mask.is_subset_of(grid) {
        return Err(Error::Invariant("salient mask is not contained in the occupancy grid".into()));
    }
    let count = grid.count();
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {count}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    );
    for i in grid.occupied() {
        let [x, y, z] = grid.coords(i);
        let p = grid.voxel_center(x, y, z);
        let c = if mask.bits()[i] != 0 { HIGHLIGHT } else { NEUTRAL };
        let _ = writeln!(s, "{} {} {} {} {} {}", p[0] as f32, p[1] as f32, p[2] as f32, c[0], c[1], c[2]);
    }
    Ok(s)
}
