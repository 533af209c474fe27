//! Training protocols, checkpoints and inference.
//!
//! Weak training runs a classification pre-training stage (global max of the
//! trunk features into a linear head) until train and validation accuracy
//! reach their thresholds, then drops the head, re-initializes the
//! segmentation branches and trains end-to-end through the average-pool /
//! global-max score under a kernel schedule. All randomness is a function of
//! `(seed, stage, epoch, shape id)`, so a run can stop after any epoch and
//! resume from its checkpoint with identical results.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::Tape;
use crate::dataset::{stable_hash, BatchLoader, Dataset, Split};
use crate::error::{Error, Result};
use crate::network::{Mode, NetConfig, Network};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::segmap::SegMap;
use crate::tensor::Tensor;
use crate::voxel::VoxelGrid;

/// Branch whose map answers "is the tagged part here" in weak mode.
pub const POSITIVE_BRANCH: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Weak,
    Strong,
    Multilabel,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Weak => "weak",
            TrainMode::Strong => "strong",
            TrainMode::Multilabel => "multilabel",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(TrainMode::Weak),
            "strong" => Ok(TrainMode::Strong),
            "multilabel" => Ok(TrainMode::Multilabel),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weak/strong use the first tag; multilabel uses one branch per tag.
    pub tags: Vec<String>,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub rotate: bool,
    pub phase1_train_acc: f64,
    pub phase1_val_acc: f64,
    pub phase1_max_epochs: usize,
    /// `(avgpool kernel, epochs)`; kernel 1 means no pooling.
    pub schedule: Vec<(usize, usize)>,
    pub strong_epochs: usize,
    /// Multilabel maps are emitted when their score exceeds this.
    pub score_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Weak,
            tags: vec!["armrest".into()],
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            rotate: false,
            phase1_train_acc: 0.95,
            phase1_val_acc: 0.95,
            phase1_max_epochs: 300,
            schedule: vec![(1, 50), (2, 10)],
            strong_epochs: 100,
            score_threshold: 0.5,
        }
    }
}

pub fn format_schedule(s: &[(usize, usize)]) -> String {
    s.iter().map(|(k, e)| format!("{k}:{e}")).collect::<Vec<_>>().join(",")
}

pub fn parse_schedule(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|item| {
            let (k, e) = item.trim().split_once(':').ok_or_else(|| Error::Config(format!("schedule item {item:?} is not kernel:epochs")))?;
            let p = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad schedule item {item:?}")));
            Ok((p(k)?, p(e)?))
        })
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.tags.is_empty() {
            return fail("at least one tag is required".into());
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return fail("batch_size and lr must be positive".into());
        }
        for t in [self.phase1_train_acc, self.phase1_val_acc, self.score_threshold] {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("threshold {t} outside [0,1]"));
            }
        }
        if self.schedule.is_empty() || self.schedule.iter().any(|&(k, _)| k == 0) {
            return fail("schedule needs at least one entry with kernel >= 1".into());
        }
        if self.schedule.windows(2).any(|w| w[1].0 < w[0].0) {
            return fail(format!("schedule kernels must be nondecreasing: {}", format_schedule(&self.schedule)));
        }
        Ok(())
    }

    pub fn schedule_epochs(&self) -> usize {
        self.schedule.iter().map(|&(_, e)| e).sum()
    }

    /// Average-pool kernel for the 0-based schedule epoch `epoch`.
    pub fn kernel_at(&self, epoch: usize) -> usize {
        let mut left = epoch;
        for &(k, e) in &self.schedule {
            if left < e {
                return k;
            }
            left -= e;
        }
        self.schedule.last().map(|&(k, _)| k).unwrap_or(1)
    }

    pub fn final_kernel(&self) -> usize {
        self.schedule.last().map(|&(k, _)| k).unwrap_or(1)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("mode", self.mode.to_string()),
            ("tags", self.tags.join(",")),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("seed", self.seed.to_string()),
            ("rotate", self.rotate.to_string()),
            ("phase1_train_acc", self.phase1_train_acc.to_string()),
            ("phase1_val_acc", self.phase1_val_acc.to_string()),
            ("phase1_max_epochs", self.phase1_max_epochs.to_string()),
            ("schedule", format_schedule(&self.schedule)),
            ("strong_epochs", self.strong_epochs.to_string()),
            ("score_threshold", self.score_threshold.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "tags" => self.tags = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "rotate" => self.rotate = num(key, value)?,
            "phase1_train_acc" => self.phase1_train_acc = num(key, value)?,
            "phase1_val_acc" => self.phase1_val_acc = num(key, value)?,
            "phase1_max_epochs" => self.phase1_max_epochs = num(key, value)?,
            "schedule" => self.schedule = parse_schedule(value)?,
            "strong_epochs" => self.strong_epochs = num(key, value)?,
            "score_threshold" => self.score_threshold = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown train key {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Phase1,
    Phase2,
    Strong,
    Multilabel,
    Done,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Phase1 => "phase1",
            Stage::Phase2 => "phase2",
            Stage::Strong => "strong",
            Stage::Multilabel => "multilabel",
            Stage::Done => "done",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "phase1" => Stage::Phase1,
            "phase2" => Stage::Phase2,
            "strong" => Stage::Strong,
            "multilabel" => Stage::Multilabel,
            "done" => Stage::Done,
            _ => return Err(Error::Config(format!("unknown stage {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase1Status {
    Converged { epochs: usize },
    NotConverged { epochs: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based epoch within the stage.
    pub epoch: usize,
    pub kernel: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub struct Trainer<T: Scalar> {
    pub net: Network<T>,
    pub opt: Adam<T>,
    pub cfg: TrainConfig,
    pub stage: Stage,
    /// Completed epochs in the current stage.
    pub epoch: usize,
    pub phase1: Option<Phase1Status>,
    pub history: Vec<EpochRecord>,
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed ^ stable_hash(&stage.to_string())
}

impl<T: Scalar> Trainer<T> {
    pub fn new(mut net: Network<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let stage = match cfg.mode {
            TrainMode::Weak => {
                net.attach_head(stage_seed(net.init_seed, Stage::Phase1));
                Stage::Phase1
            }
            TrainMode::Strong => Stage::Strong,
            TrainMode::Multilabel => {
                if net.config.branches != cfg.tags.len() {
                    return Err(Error::Config(format!(
                        "multilabel needs one branch per tag: {} branches, {} tags",
                        net.config.branches,
                        cfg.tags.len()
                    )));
                }
                Stage::Multilabel
            }
        };
        let opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        Ok(Trainer { net, opt, cfg, stage, epoch: 0, phase1: None, history: Vec::new() })
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    /// Train until done, or for at most `max_epochs` epochs.
    pub fn run(&mut self, data: &Dataset, max_epochs: Option<usize>, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        let mut ran = 0;
        while !self.is_done() && max_epochs.map_or(true, |m| ran < m) {
            self.step_epoch(data)?;
            on_epoch(self.history.last().expect("epoch recorded"));
            ran += 1;
        }
        Ok(())
    }

    fn loader(&self, tags: &[String]) -> BatchLoader {
        let tags: Vec<&str> = tags.iter().map(|s| s.as_str()).collect();
        BatchLoader::new(&tags, self.cfg.batch_size, stage_seed(self.cfg.seed, self.stage), self.cfg.rotate)
    }

    fn check_classes(&self, data: &Dataset, items: &[usize]) -> Result<()> {
        let tag = &self.cfg.tags[0];
        let mut seen = [false; 2];
        for &i in items {
            seen[data.samples[i].shape.tag(tag)? as usize] = true;
        }
        if seen != [true, true] {
            return Err(Error::Degenerate(format!("training split lacks a class for tag {tag:?}")));
        }
        Ok(())
    }

    /// Run one epoch of the current stage and advance the stage machine.
    pub fn step_epoch(&mut self, data: &Dataset) -> Result<()> {
        let train = data.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::Degenerate("empty training split".into()));
        }
        let record = match self.stage {
            Stage::Done => return Ok(()),
            Stage::Phase1 => {
                self.check_classes(data, &train)?;
                let val = data.indices(Split::Val);
                if val.is_empty() {
                    return Err(Error::Degenerate("phase 1 needs a validation split".into()));
                }
                let (loss, _) = self.train_epoch(data, &train, Mode::Phase1)?;
                let train_acc = self.accuracy(data, &train, Mode::Phase1)?;
                let val_acc = self.accuracy(data, &val, Mode::Phase1)?;
                EpochRecord { stage: Stage::Phase1, epoch: self.epoch + 1, kernel: 0, loss, train_acc, val_acc: Some(val_acc) }
            }
            Stage::Phase2 | Stage::Multilabel => {
                if self.stage == Stage::Phase2 {
                    self.check_classes(data, &train)?;
                }
                let kernel = self.cfg.kernel_at(self.epoch);
                let (loss, acc) = self.train_epoch(data, &train, Mode::Weak { kernel })?;
                EpochRecord { stage: self.stage, epoch: self.epoch + 1, kernel, loss, train_acc: acc, val_acc: None }
            }
            Stage::Strong => {
                let (loss, acc) = self.train_epoch(data, &train, Mode::Strong)?;
                EpochRecord { stage: Stage::Strong, epoch: self.epoch + 1, kernel: 0, loss, train_acc: acc, val_acc: None }
            }
        };
        self.epoch += 1;
        self.advance(&record);
        self.history.push(record);
        Ok(())
    }

    fn advance(&mut self, r: &EpochRecord) {
        match self.stage {
            Stage::Phase1 => {
                let ok = r.train_acc >= self.cfg.phase1_train_acc && r.val_acc.unwrap_or(0.0) >= self.cfg.phase1_val_acc;
                if ok {
                    self.phase1 = Some(Phase1Status::Converged { epochs: self.epoch });
                    self.net.detach_head();
                    self.net.init_branches(stage_seed(self.net.init_seed, Stage::Phase2));
                    self.opt = Adam::new(self.opt.config.clone());
                    self.stage = Stage::Phase2;
                    self.epoch = 0;
                } else if self.epoch >= self.cfg.phase1_max_epochs {
                    self.phase1 = Some(Phase1Status::NotConverged { epochs: self.epoch });
                    self.stage = Stage::Done;
                }
            }
            Stage::Phase2 | Stage::Multilabel if self.epoch >= self.cfg.schedule_epochs() => self.stage = Stage::Done,
            Stage::Strong if self.epoch >= self.cfg.strong_epochs => self.stage = Stage::Done,
            _ => {}
        }
    }

    /// One optimization pass; returns mean loss and running accuracy.
    fn train_epoch(&mut self, data: &Dataset, items: &[usize], mode: Mode) -> Result<(f64, f64)> {
        let loader = self.loader(&self.cfg.tags.clone());
        let order = loader.epoch_order(data, items, self.epoch)?;
        let multilabel = self.stage == Stage::Multilabel;
        let (mut loss_sum, mut correct, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = loader.batch::<T>(data, chunk, self.epoch)?;
            let mut tape = Tape::new();
            let phase1 = mode == Mode::Phase1;
            let vars = self.net.bind(&mut tape, |name| !(phase1 && name.starts_with("branch.")));
            let x = tape.leaf(batch.input.clone(), false);
            let out = self.net.run(&mut tape, &vars, x, mode)?;
            let loss = match mode {
                Mode::Strong => {
                    let labels = batch.voxel_labels.as_ref().ok_or_else(|| Error::Load {
                        id: batch.ids.join(","),
                        msg: format!("missing per-voxel labels for tag {:?}", self.cfg.tags[0]),
                    })?;
                    let seg = out.seg.expect("strong mode yields maps");
                    let (c, t) = voxel_accuracy(tape.value(seg), labels, &batch.input);
                    correct += c;
                    total += t;
                    tape.voxel_cross_entropy(seg, labels, x)?
                }
                _ => {
                    let scores = out.scores.expect("scores in weak and phase-1 modes");
                    let s = tape.value(scores);
                    let k = s.dims()[1];
                    if multilabel {
                        for (p, t) in s.data().iter().zip(&batch.tag_targets) {
                            correct += ((p.as_f64() > self.cfg.score_threshold) == (t.as_f64() > 0.5)) as u8 as f64;
                            total += 1.0;
                        }
                        tape.binary_cross_entropy(scores, &batch.tag_targets)?
                    } else {
                        for (row, &l) in s.data().chunks(k).zip(&batch.labels) {
                            correct += (argmax(row) == l) as u8 as f64;
                            total += 1.0;
                        }
                        tape.softmax_cross_entropy(scores, &batch.labels)?
                    }
                }
            };
            loss_sum += tape.value(loss).data()[0].as_f64() * chunk.len() as f64;
            tape.backward(loss)?;
            let mut grads = ParamStore::new();
            for (name, &v) in &vars {
                if let Some(g) = tape.take_grad(v) {
                    grads.insert(name, g);
                }
            }
            self.opt.step(&mut self.net.params, &grads)?;
        }
        Ok((loss_sum / order.len() as f64, if total > 0.0 { correct / total } else { 0.0 }))
    }

    /// Tag accuracy of `mode` scores on `items` (no augmentation).
    pub fn accuracy(&self, data: &Dataset, items: &[usize], mode: Mode) -> Result<f64> {
        let tag = &self.cfg.tags[0];
        let scores = class_scores(&self.net, data, items, mode, self.cfg.batch_size)?;
        let mut labels = Vec::with_capacity(items.len());
        for &i in items {
            labels.push(data.samples[i].shape.tag(tag)? as usize);
        }
        crate::evaluation::classification_accuracy(&scores, &labels)
    }
}

/// Correct and counted occupied voxels under per-voxel argmax.
fn voxel_accuracy<T: Scalar>(seg: &Tensor<T>, labels: &[usize], occ: &Tensor<T>) -> (f64, f64) {
    let (b, k, s) = (seg.dims()[0], seg.dims()[1], seg.spatial_len());
    let (mut c, mut t) = (0.0, 0.0);
    for bi in 0..b {
        for v in 0..s {
            if occ.data()[bi * s + v] == T::zero() {
                continue;
            }
            let mut best = 0;
            for ch in 1..k {
                if seg.data()[(bi * k + ch) * s + v] > seg.data()[(bi * k + best) * s + v] {
                    best = ch;
                }
            }
            c += (best == labels[bi * s + v]) as u8 as f64;
            t += 1.0;
        }
    }
    (c, t)
}

/// Score rows (`[branches]` or `[2]` for phase 1) for each item, in order.
pub fn class_scores<T: Scalar>(net: &Network<T>, data: &Dataset, items: &[usize], mode: Mode, batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch.max(1)) {
        let grids: Vec<Tensor<T>> = chunk.iter().map(|&i| data.samples[i].shape.grid.to_tensor()).collect();
        let r = net.forward(&Tensor::stack_batch(&grids)?, mode)?;
        let s = r.class_scores.ok_or_else(|| Error::Argument("mode yields no scores".into()))?;
        let k = s.dims()[1];
        out.extend(s.data().chunks(k).map(|row| row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()));
    }
    Ok(out)
}

/// Masked branch maps and weak-mode scores of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub maps: Vec<SegMap>,
    pub scores: Vec<f64>,
}

impl Inference {
    /// Weak-mode part map.
    pub fn part_map(&self) -> &SegMap {
        &self.maps[POSITIVE_BRANCH.min(self.maps.len() - 1)]
    }

    /// Per-voxel argmax over branches, for strong mode.
    pub fn labels(&self) -> Vec<usize> {
        let len = self.maps[0].values().len();
        (0..len)
            .map(|v| {
                let mut best = 0;
                for (b, m) in self.maps.iter().enumerate() {
                    if m.get(v) > self.maps[best].get(v) {
                        best = b;
                    }
                }
                best
            })
            .collect()
    }

    /// Branches whose score exceeds `threshold` (multilabel output rule).
    pub fn active(&self, threshold: f64) -> Vec<usize> {
        (0..self.scores.len()).filter(|&b| self.scores[b] > threshold).collect()
    }
}

pub fn infer<T: Scalar>(net: &Network<T>, grid: &VoxelGrid, kernel: usize) -> Result<Inference> {
    Ok(infer_batch(net, &[grid], kernel, 1)?.remove(0))
}

pub fn infer_batch<T: Scalar>(net: &Network<T>, grids: &[&VoxelGrid], kernel: usize, batch: usize) -> Result<Vec<Inference>> {
    let n = net.config.input_res;
    let mut out = Vec::with_capacity(grids.len());
    for chunk in grids.chunks(batch.max(1)) {
        if let Some(g) = chunk.iter().find(|g| g.res() != n) {
            return Err(Error::shape("infer resolution", &[g.res(); 3], &[n; 3]));
        }
        let ts: Vec<Tensor<T>> = chunk.iter().map(|g| g.to_tensor()).collect();
        let r = net.forward(&Tensor::stack_batch(&ts)?, Mode::Weak { kernel })?;
        let scores = r.class_scores.expect("weak mode");
        let k = scores.dims()[1];
        for b in 0..chunk.len() {
            out.push(Inference {
                maps: r.branch_maps.iter().map(|m| SegMap::from_tensor(m, b, 0)).collect::<Result<_>>()?,
                scores: scores.data()[b * k..(b + 1) * k].iter().map(|v| v.as_f64()).collect(),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- checkpoints

const CKPT_MAGIC: &str = "voxpart-checkpoint 1";
const CKPT_MANIFEST: &str = "checkpoint.txt";
const CKPT_BLOB: &str = "tensors.bin";

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

impl<T: Scalar> Trainer<T> {
    /// Write `checkpoint.txt` and `tensors.bin` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = format!("{CKPT_MAGIC}\n");
        for (k, v) in self.net.config.to_pairs() {
            text.push_str(&format!("net.{k} = {v}\n"));
        }
        for (k, v) in self.cfg.to_pairs() {
            text.push_str(&format!("train.{k} = {v}\n"));
        }
        text.push_str(&format!("init_seed = {}\n", self.net.init_seed));
        text.push_str(&format!("stage = {}\n", self.stage));
        text.push_str(&format!("epoch = {}\n", self.epoch));
        let p1 = match self.phase1 {
            None => "none".to_string(),
            Some(Phase1Status::Converged { epochs }) => format!("converged {epochs}"),
            Some(Phase1Status::NotConverged { epochs }) => format!("not_converged {epochs}"),
        };
        text.push_str(&format!("phase1 = {p1}\n"));
        text.push_str(&format!("adam.step = {}\n", self.opt.step));
        let mut blob: Vec<u8> = Vec::new();
        let mut push = |text: &mut String, kind: &str, name: &str, t: &Tensor<T>| {
            let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
            text.push_str(&format!("tensor {kind} {name} {} {} {}\n", blob.len(), t.len(), dims.join(",")));
            for v in t.data() {
                blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        };
        for (name, t) in self.net.params.iter() {
            push(&mut text, "param", name, t);
        }
        for (name, (m, v)) in &self.opt.moments {
            push(&mut text, "adam.m", name, m);
            push(&mut text, "adam.v", name, v);
        }
        for r in &self.history {
            text.push_str(&format!(
                "history {} {} {} {} {} {}\n",
                r.stage,
                r.epoch,
                r.kernel,
                hex(r.loss),
                hex(r.train_acc),
                r.val_acc.map(hex).unwrap_or_else(|| "-".into())
            ));
        }
        let blob_path = dir.join(CKPT_BLOB);
        std::fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
        let man = dir.join(CKPT_MANIFEST);
        std::fs::write(&man, text).map_err(|e| Error::io(&man, e))
    }

    /// Load a checkpoint. With `expected`, any differing `net.*` key is an
    /// [`Error::Incompatible`] listing them.
    pub fn load(dir: &Path, expected: Option<&NetConfig>) -> Result<Self> {
        let man = dir.join(CKPT_MANIFEST);
        let text = std::fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
        let blob_path = dir.join(CKPT_BLOB);
        let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        if lines.next().map(|(_, l)| l) != Some(CKPT_MAGIC) {
            return Err(Error::Parse { line: 1, msg: "missing checkpoint header".into() });
        }
        let mut net_cfg = NetConfig::default();
        let mut cfg = TrainConfig::default();
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut tensors: Vec<(String, String, Tensor<T>)> = Vec::new();
        let mut history = Vec::new();
        for (line, l) in lines {
            let perr = |msg: String| Error::Parse { line, msg };
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix("tensor ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 5 {
                    return Err(perr("tensor record needs kind name offset len dims".into()));
                }
                let off: usize = f[2].parse().map_err(|_| perr("bad offset".into()))?;
                let len: usize = f[3].parse().map_err(|_| perr("bad length".into()))?;
                let dims: Vec<usize> = f[4].split(',').map(|d| d.parse()).collect::<std::result::Result<_, _>>().map_err(|_| perr("bad dims".into()))?;
                let end = off.checked_add(len * 4).filter(|&e| e <= blob.len()).ok_or_else(|| Error::Format { offset: blob.len(), msg: format!("tensor {} exceeds blob", f[1]) })?;
                let data: Vec<T> = blob[off..end].chunks_exact(4).map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
                tensors.push((f[0].to_string(), f[1].to_string(), Tensor::new(&dims, data)?));
            } else if let Some(rest) = l.strip_prefix("history ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 6 {
                    return Err(perr("history record needs 6 fields".into()));
                }
                let num = |s: &str| s.parse::<usize>().map_err(|_| perr(format!("bad integer {s:?}")));
                let fl = |s: &str| unhex(s).ok_or_else(|| perr(format!("bad value {s:?}")));
                history.push(EpochRecord {
                    stage: f[0].parse()?,
                    epoch: num(f[1])?,
                    kernel: num(f[2])?,
                    loss: fl(f[3])?,
                    train_acc: fl(f[4])?,
                    val_acc: if f[5] == "-" { None } else { Some(fl(f[5])?) },
                });
            } else {
                let (k, v) = l.split_once(" = ").ok_or_else(|| perr(format!("unrecognized line {l:?}")))?;
                if let Some(key) = k.strip_prefix("net.") {
                    net_cfg.set(key, v)?;
                } else if let Some(key) = k.strip_prefix("train.") {
                    cfg.set(key, v)?;
                } else {
                    kv.insert(k.to_string(), v.to_string());
                }
            }
        }
        if let Some(exp) = expected {
            let have: BTreeMap<_, _> = net_cfg.to_pairs().into_iter().collect();
            let diff: Vec<String> = exp
                .to_pairs()
                .into_iter()
                .filter(|(k, v)| have.get(k) != Some(v))
                .map(|(k, v)| format!("net.{k}: checkpoint {} vs requested {v}", have.get(k).map(String::as_str).unwrap_or("?")))
                .collect();
            if !diff.is_empty() {
                return Err(Error::Incompatible(diff));
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("checkpoint missing {k}")));
        let parse_u = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Config(format!("bad {k}"))) };
        let init_seed = parse_u("init_seed")?;
        let mut net = Network::<T>::build(&net_cfg, init_seed)?;
        let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        opt.step = parse_u("adam.step")?;
        let mut params = ParamStore::new();
        let mut moments: BTreeMap<String, (Option<Tensor<T>>, Option<Tensor<T>>)> = BTreeMap::new();
        for (kind, name, t) in tensors {
            match kind.as_str() {
                "param" => params.insert(&name, t),
                "adam.m" => moments.entry(name).or_default().0 = Some(t),
                "adam.v" => moments.entry(name).or_default().1 = Some(t),
                _ => return Err(Error::Config(format!("unknown tensor kind {kind:?}"))),
            }
        }
        let expected_names: Vec<String> = net.params.names().filter(|n| !n.starts_with("head.")).map(String::from).collect();
        for name in &expected_names {
            let want = net.params.require(name)?.dims().to_vec();
            let have = params.get(name).ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if have.dims() != want.as_slice() {
                return Err(Error::shape("checkpoint parameter", have.dims(), &want));
            }
        }
        for (name, (m, v)) in moments {
            match (m, v) {
                (Some(m), Some(v)) => {
                    opt.moments.insert(name, (m, v));
                }
                _ => return Err(Error::Config(format!("incomplete optimizer moments for {name}"))),
            }
        }
        net.params = params;
        let phase1 = match get("phase1")?.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["none"] => None,
            ["converged", e] => Some(Phase1Status::Converged { epochs: e.parse().map_err(|_| Error::Config("bad phase1".into()))? }),
            ["not_converged", e] => Some(Phase1Status::NotConverged { epochs: e.parse().map_err(|_| Error::Config("bad phase1".into()))? }),
            _ => return Err(Error::Config("bad phase1 status".into())),
        };
        Ok(Trainer {
            net,
            opt,
            cfg,
            stage: get("stage")?.parse()?,
            epoch: parse_u("epoch")? as usize,
            phase1,
            history,
        })
    }
}
