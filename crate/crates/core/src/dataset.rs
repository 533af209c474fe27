//! Dataset manifests, generation of tagged corpora, loading and batching.
//!
//! Manifest format (one record per line, `#` starts a comment):
//!
//! ```text
//! voxpart-manifest 1
//! seed 7
//! param family=chair res=32 pos=100 neg=100 split=0.45,0.05,0.5
//! shape id=chair_p0000 path=shapes/chair_p0000.binvox split=train armrest=1 back=1 gt.armrest=gt/chair_p0000.armrest.binvox
//! ```
//!
//! Tag values are `0`/`1`; `gt.<tag>` paths are given for present tags only.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synth::{gen_shape_spec, Family, ShapeSpec, TaggedShape};
use crate::tensor::Tensor;
use crate::voxel::{binvox, VoxelGrid};

const MAGIC: &str = "voxpart-manifest 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub split: Split,
    pub tags: BTreeMap<String, bool>,
    pub gt_paths: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub seed: u64,
    pub params: Vec<(String, String)>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nseed {}\n", self.seed);
        if !self.params.is_empty() {
            let kv: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!("param {}\n", kv.join(" ")));
        }
        for r in &self.records {
            out.push_str(&format!("shape id={} path={} split={}", r.id, r.path, r.split));
            for (t, v) in &r.tags {
                out.push_str(&format!(" {t}={}", *v as u8));
            }
            for (t, p) in &r.gt_paths {
                out.push_str(&format!(" gt.{t}={p}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()));
        match lines.by_ref().find(|(_, l)| !l.is_empty()) {
            Some((_, l)) if l == MAGIC => {}
            Some((line, _)) => return Err(Error::Parse { line, msg: "missing manifest header".into() }),
            None => return Err(Error::Parse { line: 1, msg: "empty manifest".into() }),
        }
        let mut m = DatasetManifest::default();
        let mut seen = std::collections::HashSet::new();
        for (line, l) in lines {
            if l.is_empty() {
                continue;
            }
            let (head, rest) = l.split_once(' ').unwrap_or((l, ""));
            let pairs = || -> Result<Vec<(&str, &str)>> {
                rest.split_whitespace()
                    .map(|kv| kv.split_once('=').ok_or(Error::Parse { line, msg: format!("expected key=value, got {kv:?}") }))
                    .collect()
            };
            match head {
                "seed" => {
                    m.seed = rest.trim().parse().map_err(|_| Error::Parse { line, msg: "bad seed".into() })?;
                }
                "param" => m.params.extend(pairs()?.into_iter().map(|(k, v)| (k.to_string(), v.to_string()))),
                "shape" => {
                    let mut id = None;
                    let mut path = None;
                    let mut split = None;
                    let mut tags = BTreeMap::new();
                    let mut gt_paths = BTreeMap::new();
                    for (k, v) in pairs()? {
                        match k {
                            "id" => id = Some(v.to_string()),
                            "path" => path = Some(v.to_string()),
                            "split" => split = Some(v.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?),
                            _ if k.starts_with("gt.") => {
                                gt_paths.insert(k[3..].to_string(), v.to_string());
                            }
                            _ => {
                                let on = match v {
                                    "1" => true,
                                    "0" => false,
                                    _ => return Err(Error::Parse { line, msg: format!("tag {k} must be 0 or 1") }),
                                };
                                tags.insert(k.to_string(), on);
                            }
                        }
                    }
                    let missing = |f: &str| Error::Parse { line, msg: format!("shape record missing {f}") };
                    let id: String = id.ok_or_else(|| missing("id"))?;
                    if !seen.insert(id.clone()) {
                        return Err(Error::Parse { line, msg: format!("duplicate id {id}") });
                    }
                    m.records.push(ManifestRecord {
                        id,
                        path: path.ok_or_else(|| missing("path"))?,
                        split: split.ok_or_else(|| missing("split"))?,
                        tags,
                        gt_paths,
                    });
                }
                other => return Err(Error::Parse { line, msg: format!("unknown record {other:?}") }),
            }
        }
        Ok(m)
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// A loaded shape and its split.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub shape: TaggedShape,
    pub split: Split,
}

/// In-memory corpus, ordered as in its manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub family: Family,
    pub res: usize,
    pub count_pos: usize,
    pub count_neg: usize,
    /// `(train, val, test)`; must sum to 1.
    pub split: (f64, f64, f64),
    pub seed: u64,
    /// Probability that a chair keeps its back slab.
    pub back_prob: f64,
}

impl GenParams {
    pub fn new(family: Family, res: usize, count_pos: usize, count_neg: usize, seed: u64) -> Self {
        GenParams { family, res, count_pos, count_neg, split: (0.45, 0.05, 0.5), seed, back_prob: 1.0 }
    }
}

/// FNV-1a, used to derive stable per-item seeds from identifiers.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn split_counts(count: usize, f: (f64, f64, f64)) -> (usize, usize) {
    let train = (count as f64 * f.0).round() as usize;
    let val = ((count as f64 * f.1).round() as usize).min(count - train.min(count));
    (train.min(count), val)
}

/// Assign splits within one class: ids are sorted, permuted by a seeded
/// shuffle and cut by the split fractions.
fn assign_splits(ids: &[String], f: (f64, f64, f64), seed: u64) -> BTreeMap<String, Split> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val) = split_counts(ids.len(), f);
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), s)
        })
        .collect()
}

/// Generate a balanced tagged corpus and its manifest (paths relative to the
/// dataset root; nothing is written).
pub fn gen_dataset(p: &GenParams) -> Result<Dataset> {
    if p.count_pos == 0 || p.count_neg == 0 {
        return Err(Error::Argument("both positive and negative counts must be > 0".into()));
    }
    let (a, b, c) = p.split;
    if [a, b, c].iter().any(|&v| !(0.0..=1.0).contains(&v)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split fractions {a},{b},{c} must be in [0,1] and sum to 1")));
    }
    let tag = p.family.part_tag();
    let mut samples = Vec::new();
    let mut records = Vec::new();
    for (with_part, count, letter) in [(true, p.count_pos, 'p'), (false, p.count_neg, 'n')] {
        let ids: Vec<String> = (0..count).map(|i| format!("{}_{letter}{i:04}", p.family)).collect();
        let splits = assign_splits(&ids, p.split, p.seed ^ (with_part as u64));
        for id in &ids {
            let shape_seed = p.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stable_hash(id);
            let with_back = p.back_prob >= 1.0 || ChaCha8Rng::seed_from_u64(shape_seed ^ 0xb4c).gen_bool(p.back_prob);
            let spec = ShapeSpec { family: p.family, with_part, with_back, res: p.res };
            let shape = gen_shape_spec(&spec, shape_seed, id);
            let split = splits[id];
            records.push(ManifestRecord {
                id: id.clone(),
                path: format!("shapes/{id}.binvox"),
                split,
                tags: shape.tags.clone(),
                gt_paths: shape
                    .tags
                    .iter()
                    .filter(|(_, &on)| on)
                    .map(|(t, _)| (t.clone(), format!("gt/{id}.{t}.binvox")))
                    .collect(),
            });
            samples.push(Sample { shape, split });
        }
    }
    let manifest = DatasetManifest {
        seed: p.seed,
        params: vec![
            ("family".into(), p.family.to_string()),
            ("res".into(), p.res.to_string()),
            ("pos".into(), p.count_pos.to_string()),
            ("neg".into(), p.count_neg.to_string()),
            ("split".into(), format!("{},{},{}", a, b, c)),
            ("tag".into(), tag.to_string()),
        ],
        records,
    };
    Ok(Dataset { manifest, samples })
}

impl Dataset {
    /// Write shapes, masks and `manifest.txt` under `root`.
    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        for sub in ["shapes", "gt"] {
            std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
        }
        for (rec, s) in self.manifest.records.iter().zip(&self.samples) {
            binvox::write(&root.join(&rec.path), &s.shape.grid)?;
            for (tag, path) in &rec.gt_paths {
                binvox::write(&root.join(path), &s.shape.gt_masks[tag])?;
            }
        }
        let path = root.join("manifest.txt");
        std::fs::write(&path, self.manifest.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Read a manifest and every file it references (paths relative to the manifest).
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest = DatasetManifest::parse(&text)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let mut samples = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let load = |p: &str| {
                binvox::read(&root.join(p)).map_err(|e| Error::Load { id: r.id.clone(), msg: e.to_string() })
            };
            let grid = load(&r.path)?;
            let mut gt_masks = BTreeMap::new();
            for (tag, &on) in &r.tags {
                let mask = match r.gt_paths.get(tag) {
                    Some(p) => load(p)?,
                    None if !on => {
                        let mut m = VoxelGrid::empty(grid.res());
                        m.translate = grid.translate;
                        m.scale = grid.scale;
                        m
                    }
                    None => continue,
                };
                gt_masks.insert(tag.clone(), mask);
            }
            samples.push(Sample {
                shape: TaggedShape { id: r.id.clone(), grid, tags: r.tags.clone(), gt_masks },
                split: r.split,
            });
        }
        Ok(Dataset { manifest, samples })
    }

    pub fn res(&self) -> Option<usize> {
        self.samples.first().map(|s| s.shape.grid.res())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.shape.id == id)
    }
}

/// One of the 24 proper rotations of the cube, as a signed axis permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CubeRotation {
    perm: [usize; 3],
    flip: [bool; 3],
}

fn perm_parity(p: [usize; 3]) -> bool {
    let inversions = (p[0] > p[1]) as u8 + (p[0] > p[2]) as u8 + (p[1] > p[2]) as u8;
    inversions % 2 == 0
}

impl CubeRotation {
    pub const IDENTITY: CubeRotation = CubeRotation { perm: [0, 1, 2], flip: [false; 3] };

    pub fn all() -> Vec<CubeRotation> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::with_capacity(24);
        for p in perms {
            for bits in 0..8u8 {
                let flip = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
                let odd_flips = flip.iter().filter(|&&f| f).count() % 2 == 1;
                if perm_parity(p) != odd_flips {
                    out.push(CubeRotation { perm: p, flip });
                }
            }
        }
        out
    }

    pub fn apply(&self, g: &VoxelGrid) -> VoxelGrid {
        let n = g.res();
        g.remap(|v| {
            let mut src = [0; 3];
            for a in 0..3 {
                src[self.perm[a]] = if self.flip[a] { n - 1 - v[a] } else { v[a] };
            }
            src
        })
    }
}

/// A training minibatch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub ids: Vec<String>,
    /// `[B, 1, n, n, n]` occupancy.
    pub input: Tensor<T>,
    /// Whole-shape tag label per item (1 = present).
    pub labels: Vec<usize>,
    /// Per-tag 0/1 targets, `[B * tags.len()]`, item-major.
    pub tag_targets: Vec<T>,
    /// Per-voxel part labels `[B * n^3]` when ground-truth masks exist.
    pub voxel_labels: Option<Vec<usize>>,
}

/// Builds batches for a fixed tag set; ordering and rotation are functions of
/// `(seed, epoch, id)` only.
#[derive(Clone, Debug)]
pub struct BatchLoader {
    pub tags: Vec<String>,
    pub batch_size: usize,
    pub seed: u64,
    pub rotate: bool,
}

impl BatchLoader {
    pub fn new(tags: &[&str], batch_size: usize, seed: u64, rotate: bool) -> Self {
        BatchLoader { tags: tags.iter().map(|s| s.to_string()).collect(), batch_size: batch_size.max(1), seed, rotate }
    }

    pub fn rotation(&self, epoch: usize, id: &str) -> CubeRotation {
        if !self.rotate {
            return CubeRotation::IDENTITY;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash(id) ^ (epoch as u64).wrapping_mul(0x2545_f491));
        CubeRotation::all()[rng.gen_range(0..24)]
    }

    /// Assemble the batch for `items` (indices into `data`) at `epoch`.
    pub fn batch<T: Scalar>(&self, data: &Dataset, items: &[usize], epoch: usize) -> Result<Batch<T>> {
        let mut grids = Vec::with_capacity(items.len());
        let mut labels = Vec::new();
        let mut tag_targets = Vec::new();
        let mut voxel_labels: Option<Vec<usize>> = Some(Vec::new());
        for &i in items {
            let s = &data.samples[i].shape;
            let rot = self.rotation(epoch, &s.id);
            grids.push(rot.apply(&s.grid).to_tensor::<T>());
            for (k, t) in self.tags.iter().enumerate() {
                let on = s.tag(t)?;
                if k == 0 {
                    labels.push(on as usize);
                }
                tag_targets.push(if on { T::one() } else { T::zero() });
            }
            match (voxel_labels.as_mut(), self.tags.first().and_then(|t| s.gt(t))) {
                (Some(vl), Some(mask)) => vl.extend(rot.apply(mask).bits().iter().map(|&b| b as usize)),
                _ => voxel_labels = None,
            }
        }
        Ok(Batch {
            ids: items.iter().map(|&i| data.samples[i].shape.id.clone()).collect(),
            input: Tensor::stack_batch(&grids)?,
            labels,
            tag_targets,
            voxel_labels,
        })
    }

    /// Split `items` into consecutive batches (order preserved).
    pub fn batches<T: Scalar>(&self, data: &Dataset, items: &[usize], epoch: usize) -> Result<Vec<Batch<T>>> {
        items.chunks(self.batch_size).map(|c| self.batch(data, c, epoch)).collect()
    }

    /// Class-balanced epoch order: each class shuffled by `(seed, epoch)`,
    /// then interleaved, remainder appended.
    pub fn epoch_order(&self, data: &Dataset, items: &[usize], epoch: usize) -> Result<Vec<usize>> {
        let tag = self.tags.first().ok_or_else(|| Error::Argument("no tags configured".into()))?;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for &i in items {
            if data.samples[i].shape.tag(tag)? {
                pos.push(i);
            } else {
                neg.push(i);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0x5eed).wrapping_mul(epoch as u64 + 1));
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut out = Vec::with_capacity(items.len());
        for k in 0..pos.len().max(neg.len()) {
            out.extend(pos.get(k));
            out.extend(neg.get(k));
        }
        Ok(out)
    }
}
