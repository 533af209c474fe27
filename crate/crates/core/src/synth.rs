//! Procedural tagged shapes built from boxes directly in voxel space.
//!
//! A chair is a seat slab on four legs with a back slab; positives add two
//! side armrest panels. A table is a top on four legs; positives add a shelf.
//! Shapes are tight-fit to the grid and hollowed to their surface shell.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::voxel::{tight_fit, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Chair,
    Table,
}

impl Family {
    /// Tag carried by the optional part of this family.
    pub fn part_tag(self) -> &'static str {
        match self {
            Family::Chair => "armrest",
            Family::Table => "shelf",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Chair => "chair",
            Family::Table => "table",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chair" => Ok(Family::Chair),
            "table" => Ok(Family::Table),
            other => Err(Error::Argument(format!("unknown family {other:?}"))),
        }
    }
}

/// A voxelized shape with whole-shape tags and evaluation-only part masks.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedShape {
    pub id: String,
    pub grid: VoxelGrid,
    pub tags: BTreeMap<String, bool>,
    /// Per-tag ground-truth voxels; empty for absent tags.
    pub gt_masks: BTreeMap<String, VoxelGrid>,
}

impl TaggedShape {
    pub fn tag(&self, name: &str) -> Result<bool> {
        self.tags
            .get(name)
            .copied()
            .ok_or_else(|| Error::Load { id: self.id.clone(), msg: format!("missing tag {name:?}") })
    }

    pub fn gt(&self, name: &str) -> Option<&VoxelGrid> {
        self.gt_masks.get(name)
    }
}

/// What to build. `with_back` only affects chairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub family: Family,
    pub with_part: bool,
    pub with_back: bool,
    pub res: usize,
}

type Aabb = ([f64; 3], [f64; 3]);

struct Parts {
    body: Vec<Aabb>,
    tagged: Vec<(&'static str, Vec<Aabb>)>,
}

fn u(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn legs(w: f64, d: f64, z0: f64, t: f64, h: f64) -> Vec<Aabb> {
    let xs = [(-w / 2.0, -w / 2.0 + t), (w / 2.0 - t, w / 2.0)];
    let zs = [(z0, z0 + t), (z0 + d - t, z0 + d)];
    let mut out = Vec::new();
    for &(x0, x1) in &xs {
        for &(za, zb) in &zs {
            out.push(([x0, 0.0, za], [x1, h, zb]));
        }
    }
    out
}

fn chair(spec: &ShapeSpec, rng: &mut ChaCha8Rng) -> Parts {
    let w = u(rng, 0.85, 1.05);
    let d = u(rng, 0.80, 1.00);
    let leg_h = u(rng, 0.80, 0.95);
    let seat_t = u(rng, 0.13, 0.17);
    let leg_t = u(rng, 0.12, 0.16);
    let back_h = u(rng, 0.85, 1.00);
    let back_t = u(rng, 0.12, 0.16);
    let arm_h = u(rng, 0.30, 0.45);
    let arm_t = u(rng, 0.12, 0.16);
    let arm_len = u(rng, 0.55, 0.85) * (d - back_t);
    let top = leg_h + seat_t;

    let mut body = legs(w, d, 0.0, leg_t, leg_h);
    body.push(([-w / 2.0, leg_h, 0.0], [w / 2.0, top, d]));
    let mut tagged = Vec::new();
    let back = vec![([-w / 2.0, top, d - back_t], [w / 2.0, top + back_h, d])];
    if spec.with_back {
        tagged.push(("back", back));
    } else {
        tagged.push(("back", vec![]));
        // keep the bounding box identical to backed chairs
        body.push(([-w / 2.0, top, d - back_t], [-w / 2.0 + leg_t, top + back_h, d]));
        body.push(([w / 2.0 - leg_t, top, d - back_t], [w / 2.0, top + back_h, d]));
    }
    let arms = if spec.with_part {
        let z1 = d - back_t;
        let z0 = z1 - arm_len;
        vec![
            ([-w / 2.0, top, z0], [-w / 2.0 + arm_t, top + arm_h, z1]),
            ([w / 2.0 - arm_t, top, z0], [w / 2.0, top + arm_h, z1]),
        ]
    } else {
        vec![]
    };
    tagged.push(("armrest", arms));
    Parts { body, tagged }
}

fn table(spec: &ShapeSpec, rng: &mut ChaCha8Rng) -> Parts {
    let w = u(rng, 1.20, 1.50);
    let d = u(rng, 0.70, 0.95);
    let leg_h = u(rng, 0.70, 0.90);
    let top_t = u(rng, 0.08, 0.12);
    let leg_t = u(rng, 0.08, 0.12);
    let shelf_y = u(rng, 0.20, 0.40) * leg_h;
    let shelf_t = u(rng, 0.06, 0.09);
    let mut body = legs(w, d, -d / 2.0, leg_t, leg_h);
    body.push(([-w / 2.0, leg_h, -d / 2.0], [w / 2.0, leg_h + top_t, d / 2.0]));
    let shelf = if spec.with_part {
        vec![([-w / 2.0 + leg_t, shelf_y, -d / 2.0 + leg_t], [w / 2.0 - leg_t, shelf_y + shelf_t, d / 2.0 - leg_t])]
    } else {
        vec![]
    };
    Parts { body, tagged: vec![("shelf", shelf)] }
}

fn inside(b: &Aabb, p: [f64; 3]) -> bool {
    (0..3).all(|a| b.0[a] <= p[a] && p[a] < b.1[a])
}

/// Keep only voxels with at least one empty face neighbour (or on the border).
fn shell(solid: &VoxelGrid) -> VoxelGrid {
    let n = solid.res();
    let mut out = VoxelGrid::empty(n);
    out.translate = solid.translate;
    out.scale = solid.scale;
    for i in solid.occupied() {
        let [x, y, z] = solid.coords(i);
        let exposed = [x, y, z].iter().any(|&c| c == 0 || c == n - 1)
            || !solid.get(x - 1, y, z)
            || !solid.get(x + 1, y, z)
            || !solid.get(x, y - 1, z)
            || !solid.get(x, y + 1, z)
            || !solid.get(x, y, z - 1)
            || !solid.get(x, y, z + 1);
        if exposed {
            out.set_index(i, true);
        }
    }
    out
}

/// Build one tagged shape; deterministic in `(spec, seed)`.
pub fn gen_shape_spec(spec: &ShapeSpec, seed: u64, id: &str) -> TaggedShape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = match spec.family {
        Family::Chair => chair(spec, &mut rng),
        Family::Table => table(spec, &mut rng),
    };
    let all: Vec<&Aabb> = parts.body.iter().chain(parts.tagged.iter().flat_map(|(_, b)| b)).collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for b in &all {
        for a in 0..3 {
            lo[a] = lo[a].min(b.0[a]);
            hi[a] = hi[a].max(b.1[a]);
        }
    }
    let (origin, edge) = tight_fit(lo, hi).expect("generated boxes have positive extent");
    let n = spec.res;
    let h = edge / n as f64;
    let mut solid = VoxelGrid::empty(n);
    solid.translate = origin;
    solid.scale = edge;
    let mut tagged_solid: Vec<(&str, VoxelGrid)> =
        parts.tagged.iter().map(|(t, _)| (*t, VoxelGrid::empty(n))).collect();
    for i in 0..n * n * n {
        let [x, y, z] = solid.coords(i);
        let c = [
            origin[0] + (x as f64 + 0.5) * h,
            origin[1] + (y as f64 + 0.5) * h,
            origin[2] + (z as f64 + 0.5) * h,
        ];
        let mut hit = parts.body.iter().any(|b| inside(b, c));
        for ((_, boxes), (_, mask)) in parts.tagged.iter().zip(tagged_solid.iter_mut()) {
            if boxes.iter().any(|b| inside(b, c)) {
                mask.set_index(i, true);
                hit = true;
            }
        }
        if hit {
            solid.set_index(i, true);
        }
    }
    let grid = shell(&solid);
    let mut tags = BTreeMap::new();
    let mut gt_masks = BTreeMap::new();
    for (tag, mask) in tagged_solid {
        let mut m = mask.intersection(&grid);
        m.translate = grid.translate;
        m.scale = grid.scale;
        tags.insert(tag.to_string(), !m.is_empty());
        gt_masks.insert(tag.to_string(), m);
    }
    TaggedShape { id: id.to_string(), grid, tags, gt_masks }
}

/// Default-configured shape of `family` with or without its optional part.
pub fn gen_shape(family: Family, with_part: bool, seed: u64, res: usize) -> TaggedShape {
    let spec = ShapeSpec { family, with_part, with_back: true, res };
    let id = format!("{family}_{}_{seed}", if with_part { "p" } else { "n" });
    gen_shape_spec(&spec, seed, &id)
}
