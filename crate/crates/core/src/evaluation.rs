//! Precision/recall over pooled voxels, segmentation accuracy and IOU, and tag
//! classification accuracy.

use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::segmap::SegMap;
use crate::voxel::VoxelGrid;

/// `count` uniform thresholds from 1 down to 0.
pub fn uniform_thresholds(count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.5],
        _ => (0..count).map(|i| 1.0 - i as f64 / (count - 1) as f64).collect(),
    }
}

pub const DEFAULT_THRESHOLDS: usize = 101;

/// One evaluated shape: its map, ground-truth mask and occupancy.
#[derive(Clone, Copy, Debug)]
pub struct EvalItem<'a> {
    pub map: &'a SegMap,
    pub gt: &'a VoxelGrid,
    pub occupancy: &'a VoxelGrid,
}

/// Confusion counts per threshold; additive over disjoint shape sets.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCounts {
    /// Descending.
    pub thresholds: Vec<f64>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl PrCounts {
    pub fn add(&mut self, other: &PrCounts) -> Result<()> {
        if self.thresholds != other.thresholds {
            return Err(Error::Argument("threshold grids differ".into()));
        }
        for i in 0..self.tp.len() {
            self.tp[i] += other.tp[i];
            self.fp[i] += other.fp[i];
            self.fn_[i] += other.fn_[i];
        }
        Ok(())
    }

    pub fn positives(&self) -> u64 {
        self.tp.first().zip(self.fn_.first()).map(|(a, b)| a + b).unwrap_or(0)
    }
}

fn scored_voxels(items: &[EvalItem]) -> Result<Vec<(f32, bool)>> {
    let mut out = Vec::new();
    for it in items {
        it.map.check_grid(it.occupancy)?;
        it.map.check_grid(it.gt)?;
        for v in it.occupancy.occupied() {
            out.push((it.map.get(v), it.gt.bits()[v] != 0));
        }
    }
    Ok(out)
}

/// Counts of `map > t` predictions on occupied voxels, for each threshold.
pub fn pr_counts(items: &[EvalItem], thresholds: &[f64]) -> Result<PrCounts> {
    if thresholds.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Argument("thresholds must be descending".into()));
    }
    let mut vox = scored_voxels(items)?;
    vox.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = vox.iter().filter(|v| v.1).count() as u64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut next = 0;
    let mut out = PrCounts { thresholds: thresholds.to_vec(), tp: vec![], fp: vec![], fn_: vec![] };
    for &t in thresholds {
        while next < vox.len() && vox[next].0 as f64 > t {
            if vox[next].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            next += 1;
        }
        out.tp.push(tp);
        out.fp.push(fp);
        out.fn_.push(positives - tp);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub auc: f64,
    /// No threshold produced any prediction.
    pub degenerate: bool,
}

impl PrCurve {
    pub fn from_counts(c: &PrCounts) -> Result<Self> {
        if c.positives() == 0 {
            return Err(Error::Degenerate("no ground-truth positive voxels in the evaluation set".into()));
        }
        let n = c.thresholds.len();
        let mut precision = Vec::with_capacity(n);
        let mut recall = Vec::with_capacity(n);
        for i in 0..n {
            let pred = c.tp[i] + c.fp[i];
            precision.push(if pred == 0 { 1.0 } else { c.tp[i] as f64 / pred as f64 });
            recall.push(c.tp[i] as f64 / (c.tp[i] + c.fn_[i]) as f64);
        }
        // Trapezoids over recall through the thresholds that predict something,
        // anchored at recall 0 with the first such precision.
        let live: Vec<usize> = (0..n).filter(|&i| c.tp[i] + c.fp[i] > 0).collect();
        let mut auc = 0.0;
        if let Some(&first) = live.first() {
            let (mut r0, mut p0) = (0.0, precision[first]);
            for &i in &live {
                auc += (recall[i] - r0) * (precision[i] + p0) / 2.0;
                r0 = recall[i];
                p0 = precision[i];
            }
        }
        Ok(PrCurve { thresholds: c.thresholds.clone(), precision, recall, auc, degenerate: live.is_empty() })
    }

    /// Columns `threshold,precision,recall` and a trailing `# auc=` line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for i in 0..self.thresholds.len() {
            let _ = writeln!(s, "{},{},{}", self.thresholds[i], self.precision[i], self.recall[i]);
        }
        let _ = writeln!(s, "# auc={}{}", self.auc, if self.degenerate { " degenerate" } else { "" });
        s
    }
}

/// Pooled precision/recall of `items` over `thresholds` (descending).
pub fn pr_curve(items: &[EvalItem], thresholds: &[f64]) -> Result<PrCurve> {
    PrCurve::from_counts(&pr_counts(items, thresholds)?)
}

/// Curve whose thresholds are every distinct map value on occupied voxels
/// (plus one below the minimum); depends only on the ordering of values.
pub fn pr_curve_exact(items: &[EvalItem]) -> Result<PrCurve> {
    let mut values: Vec<f64> = scored_voxels(items)?.iter().map(|v| v.0 as f64).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values.dedup();
    values.push(f64::NEG_INFINITY);
    pr_curve(items, &values)
}

/// Zero the maps of shapes the classifier rejects, then score them.
pub fn gated_strong_eval(items: &[EvalItem], predicted_present: &[bool], thresholds: &[f64]) -> Result<PrCurve> {
    if items.len() != predicted_present.len() {
        return Err(Error::shape("gated evaluation", &[items.len()], &[predicted_present.len()]));
    }
    let zeroed: Vec<SegMap> = items
        .iter()
        .zip(predicted_present)
        .map(|(it, &keep)| if keep { it.map.clone() } else { SegMap::zeros(it.map.res()) })
        .collect();
    let gated: Vec<EvalItem> =
        items.iter().zip(&zeroed).map(|(it, m)| EvalItem { map: m, gt: it.gt, occupancy: it.occupancy }).collect();
    pr_curve(&gated, thresholds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelMetrics {
    pub accuracy: f64,
    /// `None` for classes absent from both prediction and ground truth.
    pub iou: Vec<Option<f64>>,
    pub mean_iou: f64,
}

impl VoxelMetrics {
    pub fn to_text(&self) -> String {
        let mut s = format!("accuracy = {}\n", self.accuracy);
        for (c, v) in self.iou.iter().enumerate() {
            match v {
                Some(v) => s.push_str(&format!("iou.{c} = {v}\n")),
                None => s.push_str(&format!("iou.{c} = absent\n")),
            }
        }
        s.push_str(&format!("mean_iou = {}\n", self.mean_iou));
        s
    }
}

/// Accuracy and per-class IOU over occupied voxels, accumulated over shapes.
pub fn voxel_metrics(items: &[(&[usize], &[usize], &VoxelGrid)], classes: usize) -> Result<VoxelMetrics> {
    let mut inter = vec![0u64; classes];
    let mut union = vec![0u64; classes];
    let (mut correct, mut total) = (0u64, 0u64);
    for (pred, gt, occ) in items {
        let len = occ.bits().len();
        if pred.len() != len || gt.len() != len {
            return Err(Error::shape("voxel metrics", &[pred.len(), gt.len()], &[len]));
        }
        for v in occ.occupied() {
            let (p, g) = (pred[v], gt[v]);
            if p >= classes || g >= classes {
                return Err(Error::Argument(format!("class id {} >= {classes}", p.max(g))));
            }
            total += 1;
            if p == g {
                correct += 1;
                inter[p] += 1;
                union[p] += 1;
            } else {
                union[p] += 1;
                union[g] += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Degenerate("no occupied voxels".into()));
    }
    let iou: Vec<Option<f64>> =
        (0..classes).map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64)).collect();
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    Ok(VoxelMetrics {
        accuracy: correct as f64 / total as f64,
        mean_iou: present.iter().sum::<f64>() / present.len() as f64,
        iou,
    })
}

/// Fraction of rows whose argmax (first on ties) equals the label.
pub fn classification_accuracy(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Degenerate(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(row, &l)| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best == l
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-tag accuracy of `score > threshold` against presence targets.
pub fn multilabel_accuracy(scores: &[Vec<f64>], targets: &[Vec<bool>], threshold: f64) -> Result<Vec<f64>> {
    let k = scores.first().map(|r| r.len()).ok_or_else(|| Error::Degenerate("no scores".into()))?;
    if scores.len() != targets.len() || scores.iter().chain(targets.iter().map(|_| &scores[0])).any(|r| r.len() != k) {
        return Err(Error::Argument("score and target rows differ".into()));
    }
    Ok((0..k)
        .map(|t| {
            let ok = scores.iter().zip(targets).filter(|(s, g)| (s[t] > threshold) == g[t]).count();
            ok as f64 / scores.len() as f64
        })
        .collect())
}

/// Optionally symmetrized copy of a part map over its shape.
pub fn prepare_map(map: &SegMap, grid: &VoxelGrid, symmetrize: bool) -> Result<SegMap> {
    if symmetrize && !grid.is_empty() {
        let plane = crate::postprocess::detect_symmetry_plane(grid)?;
        crate::postprocess::symmetrize_map(map, &plane, grid)
    } else {
        map.masked(grid)
    }
}

/// Pooled curve of per-shape part maps against the `tag` masks of `items`.
pub fn part_pr_curve(
    maps: &[SegMap],
    data: &Dataset,
    items: &[usize],
    tag: &str,
    symmetrize: bool,
    thresholds: &[f64],
) -> Result<PrCurve> {
    if maps.len() != items.len() {
        return Err(Error::shape("part maps", &[maps.len()], &[items.len()]));
    }
    let prepared: Vec<SegMap> = maps
        .iter()
        .zip(items)
        .map(|(m, &i)| prepare_map(m, &data.samples[i].shape.grid, symmetrize))
        .collect::<Result<_>>()?;
    let mut eval = Vec::with_capacity(items.len());
    for (m, &i) in prepared.iter().zip(items) {
        let s = &data.samples[i].shape;
        let gt = s.gt(tag).ok_or_else(|| Error::Load { id: s.id.clone(), msg: format!("no ground truth for {tag:?}") })?;
        eval.push(EvalItem { map: m, gt, occupancy: &s.grid });
    }
    pr_curve(&eval, thresholds)
}
