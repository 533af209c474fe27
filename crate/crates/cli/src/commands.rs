use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use voxpart::config::RunConfig;
use voxpart::dataset::{gen_dataset, Dataset, GenParams, Split};
use voxpart::evaluation::{gated_strong_eval, pr_curve, prepare_map, uniform_thresholds, voxel_metrics, EvalItem};
use voxpart::network::{param_count, Network};
use voxpart::postprocess::{detect_symmetry_plane, symmetrize_map, threshold_map};
use voxpart::retrieval::{distance_matrix, export_thumbnail, extract_salient, rank_search, SalientSet};
use voxpart::segmap::{SegFile, SegMap};
use voxpart::synth::Family;
use voxpart::training::{infer_batch, TrainMode, Trainer, POSITIVE_BRANCH};
use voxpart::voxel::{binvox, parse_obj, voxelize_surface};
use voxpart::Trainer32;

use crate::{Command, ConfigArgs};

const SCORES_FILE: &str = "scores.txt";

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| voxpart::Error::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Where a command's run manifest goes: inside a directory output, or next
/// to a file output.
fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("run.txt")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".run.txt");
        out.with_file_name(name)
    }
}

struct RunLog {
    command: &'static str,
    started: Instant,
    threads: usize,
    seed: Option<u64>,
    config: Option<String>,
}

impl RunLog {
    fn new(command: &'static str, threads: Option<usize>) -> Self {
        RunLog { command, started: Instant::now(), threads: threads.unwrap_or_else(rayon::current_num_threads), seed: None, config: None }
    }

    fn finish(self, path: &Path) -> Result<()> {
        let argv: Vec<String> = std::env::args().collect();
        let mut s = String::from("voxpart-run 1\n");
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "argv = {}", argv.join(" "));
        let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "threads = {}", self.threads);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        let _ = writeln!(s, "wall_seconds = {:.3}", self.started.elapsed().as_secs_f64());
        if let Some(c) = self.config {
            s.push_str("\n# config\n");
            s.push_str(&c);
        }
        write(path, s)
    }
}

/// A manifest file, or a dataset directory containing `manifest.txt`.
fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() { path.join("manifest.txt") } else { path.to_path_buf() };
    Ok(Dataset::load(&manifest)?)
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    Ok(match s {
        "all" => None,
        other => Some(other.parse()?),
    })
}

fn select(data: &Dataset, split: Option<Split>) -> Vec<usize> {
    match split {
        Some(s) => data.indices(s),
        None => (0..data.samples.len()).collect(),
    }
}

fn default_tag(data: &Dataset, tag: Option<String>) -> Result<String> {
    match tag.or_else(|| data.manifest.param("tag").map(String::from)) {
        Some(t) => Ok(t),
        None => bail!(voxpart::Error::Argument("no --tag given and the manifest names none".into())),
    }
}

/// Names of the maps a trained network emits, in branch order.
fn map_names(t: &Trainer32) -> Vec<String> {
    let k = t.net.config.branches;
    if t.cfg.mode == TrainMode::Multilabel {
        return t.cfg.tags.clone();
    }
    (0..k)
        .map(|b| match b {
            POSITIVE_BRANCH => t.cfg.tags[0].clone(),
            0 if k == 2 => "rest".to_string(),
            _ => format!("branch{b}"),
        })
        .collect()
}

fn seg_path(pred: &Path, id: &str) -> PathBuf {
    pred.join(format!("{id}.seg"))
}

fn load_map(pred: &Path, id: &str, tag: &str) -> Result<(SegFile, SegMap)> {
    let seg = SegFile::read(&seg_path(pred, id))?;
    let map = seg
        .get(tag)
        .cloned()
        .ok_or_else(|| voxpart::Error::Load { id: id.to_string(), msg: format!("no map named {tag:?}") })?;
    Ok((seg, map))
}

fn salient_corpus(data: &Dataset, pred: &Path, tag: &str, cfg: &RunConfig) -> Result<Vec<(String, SalientSet)>> {
    data.samples
        .iter()
        .map(|s| {
            let (_, m) = load_map(pred, &s.shape.id, tag)?;
            let m = prepare_map(&m, &s.shape.grid, cfg.eval.symmetrize)?;
            Ok((s.shape.id.clone(), extract_salient(&m, &s.shape.grid, cfg.eval.salient_threshold)?))
        })
        .collect()
}

pub fn run(cmd: Command, threads: Option<usize>) -> Result<()> {
    match cmd {
        Command::Gen { family, pos, neg, res, seed, split, back_prob, out } => {
            let mut log = RunLog::new("gen", threads);
            log.seed = Some(seed);
            let f: Vec<f64> = split
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| voxpart::Error::Argument(format!("bad split {split:?}")))?;
            let [a, b, c] = f[..] else { bail!(voxpart::Error::Argument(format!("split needs three fractions, got {split:?}"))) };
            let fam: Family = family.parse()?;
            let params = GenParams { split: (a, b, c), back_prob, ..GenParams::new(fam, res, pos, neg, seed) };
            let data = gen_dataset(&params)?;
            let manifest = data.write(&out)?;
            println!("wrote {} shapes, manifest {}", data.samples.len(), manifest.display());
            log.finish(&manifest_path(&out, true))
        }
        Command::Voxelize { input, out, res } => {
            let log = RunLog::new("voxelize", threads);
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let grid = voxelize_surface(&parse_obj(&text)?, res)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            binvox::write(&out, &grid)?;
            println!("{} occupied voxels at {res}^3", grid.count());
            log.finish(&manifest_path(&out, false))
        }
        Command::Describe { cfg } => {
            let cfg = load_config(&cfg)?;
            let net = Network::<f32>::build(&cfg.net, cfg.train.seed)?;
            print!("{}", net.describe());
            println!("param_count = {}", param_count(&cfg.net)?);
            Ok(())
        }
        Command::Train { cfg, mode, data, out, resume, max_epochs } => {
            let mut run_cfg = load_config(&cfg)?;
            if let Some(m) = mode {
                run_cfg.set("train.mode", &m)?;
            }
            let mut log = RunLog::new("train", threads);
            log.seed = Some(run_cfg.train.seed);
            log.config = Some(run_cfg.to_text());
            let dataset = load_dataset(&data)?;
            if dataset.res() != Some(run_cfg.net.input_res) {
                bail!(voxpart::Error::Config(format!(
                    "net.input_res {} does not match dataset resolution {:?}",
                    run_cfg.net.input_res,
                    dataset.res()
                )));
            }
            let mut trainer = if resume && out.join("checkpoint.txt").exists() {
                let t = Trainer32::load(&out, Some(&run_cfg.net))?;
                if t.cfg != run_cfg.train {
                    bail!(voxpart::Error::Incompatible(vec!["train.* settings differ from the checkpoint".into()]));
                }
                t
            } else {
                Trainer::new(Network::build(&run_cfg.net, run_cfg.train.seed)?, run_cfg.train.clone())?
            };
            create_dir(&out)?;
            let mut ran = 0;
            while !trainer.is_done() && max_epochs.map_or(true, |m| ran < m) {
                trainer.step_epoch(&dataset)?;
                let r = trainer.history.last().expect("epoch recorded");
                eprintln!(
                    "{} epoch {} kernel {} loss {:.5} train_acc {:.4}{}",
                    r.stage,
                    r.epoch,
                    r.kernel,
                    r.loss,
                    r.train_acc,
                    r.val_acc.map(|v| format!(" val_acc {v:.4}")).unwrap_or_default()
                );
                trainer.save(&out)?;
                ran += 1;
            }
            trainer.save(&out)?;
            println!("stage {} after {} recorded epochs; phase1 {:?}", trainer.stage, trainer.history.len(), trainer.phase1);
            log.finish(&manifest_path(&out, true))
        }
        Command::Infer { ckpt, data, split, kernel, out } => {
            let log = RunLog::new("infer", threads);
            let t = Trainer32::load(&ckpt, None)?;
            let dataset = load_dataset(&data)?;
            let items = select(&dataset, parse_split(&split)?);
            let kernel = kernel.unwrap_or_else(|| t.cfg.final_kernel());
            let names = map_names(&t);
            create_dir(&out)?;
            let mut scores = String::new();
            for chunk in items.chunks(t.cfg.batch_size.max(1)) {
                let grids: Vec<_> = chunk.iter().map(|&i| &dataset.samples[i].shape.grid).collect();
                for (&i, inf) in chunk.iter().zip(infer_batch(&t.net, &grids, kernel, chunk.len())?) {
                    let id = &dataset.samples[i].shape.id;
                    let seg = SegFile { maps: names.iter().cloned().zip(inf.maps).collect() };
                    seg.write(&seg_path(&out, id))?;
                    let row: Vec<String> = inf.scores.iter().map(|s| s.to_string()).collect();
                    let _ = writeln!(scores, "{id} {}", row.join(" "));
                }
            }
            write(&out.join(SCORES_FILE), scores)?;
            println!("wrote {} maps", items.len());
            log.finish(&manifest_path(&out, true))
        }
        Command::Postprocess { map, grid, symmetrize, threshold, tag, out } => {
            let log = RunLog::new("postprocess", threads);
            let g = binvox::read(&grid)?;
            let mut seg = SegFile::read(&map)?;
            create_dir(&out)?;
            let stem = map.file_stem().and_then(|s| s.to_str()).unwrap_or("map").to_string();
            if symmetrize {
                let plane = detect_symmetry_plane(&g)?;
                write(&out.join("plane.txt"), format!("axis = {}\nposition = {}\nscore = {}\n", plane.axis, plane.position, plane.score))?;
                for (_, m) in seg.maps.iter_mut() {
                    *m = symmetrize_map(m, &plane, &g)?;
                }
            }
            seg.write(&out.join(format!("{stem}.seg")))?;
            if let Some(t) = threshold {
                for (name, m) in &seg.maps {
                    if tag.as_ref().map_or(true, |want| want == name) {
                        binvox::write(&out.join(format!("{stem}.{name}.binvox")), &threshold_map(m, t, &g)?)?;
                    }
                }
            }
            log.finish(&manifest_path(&out, true))
        }
        Command::Eval { cfg, pred, gt, tag, split, gate, out } => {
            let run_cfg = load_config(&cfg)?;
            let mut log = RunLog::new("eval", threads);
            log.config = Some(run_cfg.to_text());
            let dataset = load_dataset(&gt)?;
            let tag = default_tag(&dataset, tag)?;
            let items = select(&dataset, parse_split(&split)?);
            let mut maps = Vec::new();
            let mut labels = Vec::new();
            for &i in &items {
                let s = &dataset.samples[i].shape;
                let (seg, m) = load_map(&pred, &s.id, &tag)?;
                maps.push(prepare_map(&m, &s.grid, run_cfg.eval.symmetrize)?);
                let part = seg.maps.iter().position(|(n, _)| *n == tag).expect("map found above");
                let pred_labels: Vec<usize> = (0..s.grid.bits().len())
                    .map(|v| {
                        let mut best = 0;
                        for (b, (_, mb)) in seg.maps.iter().enumerate() {
                            if mb.get(v) > seg.maps[best].1.get(v) {
                                best = b;
                            }
                        }
                        (best == part) as usize
                    })
                    .collect();
                let gt_mask = s.gt(&tag).ok_or_else(|| voxpart::Error::Load { id: s.id.clone(), msg: format!("no ground truth for {tag:?}") })?;
                labels.push((pred_labels, gt_mask.bits().iter().map(|&b| b as usize).collect::<Vec<_>>()));
            }
            let eval_items: Vec<EvalItem> = items
                .iter()
                .zip(&maps)
                .map(|(&i, m)| {
                    let s = &dataset.samples[i].shape;
                    EvalItem { map: m, gt: s.gt(&tag).expect("checked above"), occupancy: &s.grid }
                })
                .collect();
            let thresholds = uniform_thresholds(run_cfg.eval.thresholds);
            let curve = match &gate {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    let present: std::collections::BTreeMap<&str, bool> = text
                        .lines()
                        .filter_map(|l| {
                            let mut f = l.split_whitespace();
                            let id = f.next()?;
                            let s: Vec<f64> = f.filter_map(|v| v.parse().ok()).collect();
                            let best = (0..s.len()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
                            Some((id, best == POSITIVE_BRANCH))
                        })
                        .collect();
                    let gate: Vec<bool> = items
                        .iter()
                        .map(|&i| {
                            let id = &dataset.samples[i].shape.id;
                            present.get(id.as_str()).copied().ok_or_else(|| voxpart::Error::Load { id: id.clone(), msg: "no classifier score".into() })
                        })
                        .collect::<std::result::Result<_, _>>()?;
                    gated_strong_eval(&eval_items, &gate, &thresholds)?
                }
                None => pr_curve(&eval_items, &thresholds)?,
            };
            write(&out, curve.to_csv())?;
            let vm_items: Vec<(&[usize], &[usize], &voxpart::voxel::VoxelGrid)> = items
                .iter()
                .zip(&labels)
                .map(|(&i, (p, g))| (p.as_slice(), g.as_slice(), &dataset.samples[i].shape.grid))
                .collect();
            let metrics = voxel_metrics(&vm_items, 2)?;
            let mut text = format!("tag = {tag}\nshapes = {}\nauc = {}\n", items.len(), curve.auc);
            text.push_str(&metrics.to_text());
            let mut name = out.file_stem().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".metrics.txt");
            write(&out.with_file_name(name), &text)?;
            print!("{text}");
            log.finish(&manifest_path(&out, false))
        }
        Command::Search { cfg, query, tag, k, pred, data, out } => {
            let run_cfg = load_config(&cfg)?;
            let dataset = load_dataset(&data)?;
            let corpus = salient_corpus(&dataset, &pred, &tag, &run_cfg)?;
            let ranked = rank_search(&query, &corpus, k.unwrap_or(run_cfg.retrieval.k))?;
            let mut text = String::new();
            for (rank, (id, d)) in ranked.iter().enumerate() {
                let _ = writeln!(text, "{} {id} {d}", rank + 1);
            }
            print!("{text}");
            if let Some(out) = out {
                let mut log = RunLog::new("search", threads);
                log.config = Some(run_cfg.to_text());
                write(&out, &text)?;
                log.finish(&manifest_path(&out, false))?;
            }
            Ok(())
        }
        Command::Embed { cfg, tag, pred, data, out } => {
            let run_cfg = load_config(&cfg)?;
            let mut log = RunLog::new("embed", threads);
            log.config = Some(run_cfg.to_text());
            let dataset = load_dataset(&data)?;
            let corpus = salient_corpus(&dataset, &pred, &tag, &run_cfg)?;
            let m = distance_matrix(&corpus)?;
            write(&out, m.to_text())?;
            let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".excluded");
            write(&out.with_file_name(name), m.exclusions_text())?;
            println!("{} shapes in matrix, {} excluded", m.ids.len(), m.excluded.len());
            log.finish(&manifest_path(&out, false))
        }
        Command::Thumb { cfg, shape, tag, pred, data, out } => {
            let run_cfg = load_config(&cfg)?;
            let mut log = RunLog::new("thumb", threads);
            log.config = Some(run_cfg.to_text());
            let dataset = load_dataset(&data)?;
            let s = &dataset.get(&shape).ok_or_else(|| voxpart::Error::Argument(format!("unknown shape {shape:?}")))?.shape;
            let (_, m) = load_map(&pred, &shape, &tag)?;
            let m = prepare_map(&m, &s.grid, run_cfg.eval.symmetrize)?;
            let mask = threshold_map(&m, run_cfg.eval.salient_threshold, &s.grid)?;
            write(&out, export_thumbnail(&s.grid, &mask)?)?;
            println!("{} points, {} highlighted", s.grid.count(), mask.count());
            log.finish(&manifest_path(&out, false))
        }
    }
}
