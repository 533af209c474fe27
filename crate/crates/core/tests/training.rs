use std::collections::BTreeMap;

use voxpart::dataset::{Dataset, DatasetManifest, ManifestRecord, Sample, Split};
use voxpart::error::Error;
use voxpart::network::{Arch, NetConfig, Network};
use voxpart::synth::TaggedShape;
use voxpart::training::{infer, Phase1Status, Stage, TrainConfig, TrainMode, Trainer};
use voxpart::voxel::VoxelGrid;

const N: usize = 16;

/// Floor slab everywhere; positives also carry a 3-voxel cube at an
/// id-dependent spot.
fn toy_shape(i: usize, hot: bool) -> TaggedShape {
    let mut grid = VoxelGrid::empty(N);
    for x in 2..14 {
        for z in 2..14 {
            grid.set(x, 1, z, true);
        }
    }
    let mut part = VoxelGrid::empty(N);
    if hot {
        let (ox, oz) = (2 + (i * 5) % 9, 2 + (i * 7) % 9);
        for x in ox..ox + 3 {
            for y in 2..5 {
                for z in oz..oz + 3 {
                    grid.set(x, y, z, true);
                    part.set(x, y, z, true);
                }
            }
        }
    }
    let id = format!("toy_{}{i:04}", if hot { 'p' } else { 'n' });
    TaggedShape {
        id,
        grid,
        tags: BTreeMap::from([("hot".to_string(), hot)]),
        gt_masks: BTreeMap::from([("hot".to_string(), part)]),
    }
}

fn toy_data(per_class: usize, same: bool) -> Dataset {
    let mut samples = Vec::new();
    for hot in [true, false] {
        for i in 0..per_class {
            let mut shape = toy_shape(i, hot);
            if same {
                shape.grid = toy_shape(i, false).grid;
            }
            let split = if i + 1 == per_class { Split::Val } else { Split::Train };
            samples.push(Sample { shape, split });
        }
    }
    let records = samples
        .iter()
        .map(|s| ManifestRecord {
            id: s.shape.id.clone(),
            path: format!("shapes/{}.binvox", s.shape.id),
            split: s.split,
            tags: s.shape.tags.clone(),
            gt_paths: BTreeMap::new(),
        })
        .collect();
    Dataset { manifest: DatasetManifest { seed: 0, params: vec![], records }, samples }
}

fn small_net() -> NetConfig {
    NetConfig {
        arch: Arch::ShallowUStack { stack: 1 },
        channels: 4,
        convs_per_block: 1,
        kernel: 3,
        input_res: N,
        ..NetConfig::default()
    }
}

fn weak_cfg() -> TrainConfig {
    TrainConfig {
        tags: vec!["hot".into()],
        batch_size: 2,
        lr: 3e-3,
        seed: 5,
        phase1_train_acc: 1.0,
        phase1_val_acc: 1.0,
        phase1_max_epochs: 40,
        schedule: vec![(1, 2), (2, 1)],
        ..TrainConfig::default()
    }
}

fn trainer(cfg: TrainConfig) -> Trainer<f32> {
    Trainer::new(Network::build(&small_net(), 11).unwrap(), cfg).unwrap()
}

fn params_bits(t: &Trainer<f32>) -> Vec<(String, Vec<u32>)> {
    t.net.params.iter().map(|(n, p)| (n.to_string(), p.data().iter().map(|v| v.to_bits()).collect())).collect()
}

#[test]
fn weak_protocol_runs_both_phases() {
    let data = toy_data(5, false);
    let mut t = trainer(weak_cfg());
    t.run(&data, None, |_| {}).unwrap();
    assert!(t.is_done());
    let Some(Phase1Status::Converged { epochs }) = t.phase1 else { panic!("phase 1 did not converge: {:?}", t.phase1) };
    let p2: Vec<_> = t.history.iter().filter(|r| r.stage == Stage::Phase2).collect();
    assert_eq!(p2.iter().map(|r| r.kernel).collect::<Vec<_>>(), vec![1, 1, 2]);
    assert_eq!(t.history.len(), epochs + 3);
    assert!(!t.net.has_head());
    let last = t.history.iter().find(|r| r.stage == Stage::Phase1 && r.epoch == epochs).unwrap();
    assert_eq!((last.train_acc, last.val_acc), (1.0, Some(1.0)));
}

#[test]
fn zero_thresholds_stop_phase_one_after_one_epoch() {
    let data = toy_data(3, false);
    let cfg = TrainConfig { phase1_train_acc: 0.0, phase1_val_acc: 0.0, schedule: vec![(1, 1)], ..weak_cfg() };
    let mut t = trainer(cfg);
    t.run(&data, None, |_| {}).unwrap();
    assert_eq!(t.phase1, Some(Phase1Status::Converged { epochs: 1 }));
    assert_eq!(t.history.len(), 2);
}

#[test]
fn unlearnable_phase_one_hits_cap_without_phase_two() {
    let data = toy_data(3, true);
    let cfg = TrainConfig { phase1_max_epochs: 2, ..weak_cfg() };
    let mut t = trainer(cfg);
    t.run(&data, None, |_| {}).unwrap();
    assert_eq!(t.phase1, Some(Phase1Status::NotConverged { epochs: 2 }));
    assert!(t.history.iter().all(|r| r.stage == Stage::Phase1));
    assert!(t.is_done());
}

#[test]
fn training_is_deterministic() {
    let data = toy_data(3, false);
    let cfg = TrainConfig { rotate: true, ..weak_cfg() };
    let mut a = trainer(cfg.clone());
    let mut b = trainer(cfg);
    a.run(&data, Some(3), |_| {}).unwrap();
    b.run(&data, Some(3), |_| {}).unwrap();
    assert_eq!(params_bits(&a), params_bits(&b));
    assert_eq!(a.history, b.history);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = toy_data(3, false);
    let cfg = TrainConfig { phase1_train_acc: 0.0, phase1_val_acc: 0.0, schedule: vec![(1, 2), (2, 2)], ..weak_cfg() };
    let mut full = trainer(cfg.clone());
    full.run(&data, None, |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut part = trainer(cfg);
    for stop in [1, 2] {
        part.run(&data, Some(stop), |_| {}).unwrap();
        part.save(dir.path()).unwrap();
        part = Trainer::load(dir.path(), Some(&small_net())).unwrap();
    }
    part.run(&data, None, |_| {}).unwrap();
    assert_eq!(params_bits(&full), params_bits(&part));
    assert_eq!(full.history, part.history);
    assert_eq!(full.opt.step, part.opt.step);
}

#[test]
fn f64_checkpoint_stores_single_precision() {
    let data = toy_data(2, false);
    let mut t = Trainer::<f64>::new(Network::build(&small_net(), 2).unwrap(), weak_cfg()).unwrap();
    t.run(&data, Some(1), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save(dir.path()).unwrap();
    let u = Trainer::<f64>::load(dir.path(), None).unwrap();
    for (name, p) in t.net.params.iter() {
        let q = u.net.params.get(name).unwrap();
        assert!(p.data().iter().zip(q.data()).all(|(a, b)| (*a as f32) as f64 == *b), "{name}");
    }
    assert_eq!((u.stage, u.epoch, &u.history), (t.stage, t.epoch, &t.history));
}

#[test]
fn incompatible_checkpoint_lists_keys() {
    let data = toy_data(2, false);
    let mut t = trainer(weak_cfg());
    t.run(&data, Some(1), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save(dir.path()).unwrap();
    let other = NetConfig { channels: 6, ..small_net() };
    match Trainer::<f32>::load(dir.path(), Some(&other)) {
        Err(Error::Incompatible(keys)) => {
            assert_eq!(keys.len(), 1);
            assert!(keys[0].starts_with("net.channels"), "{keys:?}");
        }
        other => panic!("expected incompatibility, got {:?}", other.err()),
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let data = toy_data(2, false);
    let mut t = trainer(weak_cfg());
    t.run(&data, Some(1), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save(dir.path()).unwrap();
    let blob = dir.path().join("tensors.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(Trainer::<f32>::load(dir.path(), None), Err(Error::Format { .. })));
    std::fs::write(dir.path().join("checkpoint.txt"), "not a checkpoint\n").unwrap();
    assert!(matches!(Trainer::<f32>::load(dir.path(), None), Err(Error::Parse { .. })));
}

#[test]
fn strong_mode_fits_uniform_labels() {
    let mut data = toy_data(2, false);
    for s in &mut data.samples {
        s.shape.gt_masks.insert("hot".into(), s.shape.grid.clone());
    }
    let cfg = TrainConfig { mode: TrainMode::Strong, strong_epochs: 60, lr: 1e-2, ..weak_cfg() };
    let mut t = trainer(cfg);
    t.run(&data, None, |_| {}).unwrap();
    let last = t.history.last().unwrap();
    assert!(last.loss < 1e-2, "final loss {}", last.loss);
    assert_eq!(last.train_acc, 1.0);
}

#[test]
fn strong_mode_needs_masks() {
    let mut data = toy_data(2, false);
    data.samples[0].shape.gt_masks.clear();
    let mut t = trainer(TrainConfig { mode: TrainMode::Strong, ..weak_cfg() });
    assert!(matches!(t.step_epoch(&data), Err(Error::Load { .. })));
}

#[test]
fn multilabel_branch_count_and_thresholds() {
    let mut data = toy_data(3, false);
    for s in &mut data.samples {
        s.shape.tags.insert("floor".into(), true);
    }
    let cfg = TrainConfig {
        mode: TrainMode::Multilabel,
        tags: vec!["hot".into(), "floor".into()],
        schedule: vec![(1, 2)],
        ..weak_cfg()
    };
    let net = Network::<f32>::build(&NetConfig { branches: 3, ..small_net() }, 1).unwrap();
    assert!(matches!(Trainer::new(net, cfg.clone()), Err(Error::Config(_))));
    let mut t = trainer(cfg);
    t.run(&data, None, |_| {}).unwrap();
    assert_eq!(t.history.len(), 2);
    let inf = infer(&t.net, &data.samples[0].shape.grid, 1).unwrap();
    assert_eq!(inf.active(0.0).len(), 2);
    assert!(inf.active(1.0).is_empty());
}

#[test]
fn one_class_training_split_is_degenerate() {
    let mut data = toy_data(3, false);
    data.samples.retain(|s| s.shape.tags["hot"]);
    let mut t = trainer(weak_cfg());
    assert!(matches!(t.step_epoch(&data), Err(Error::Degenerate(_))));
}

#[test]
fn inference_is_deterministic_and_masked() {
    let net = Network::<f32>::build(&small_net(), 4).unwrap();
    let g = toy_shape(1, true).grid;
    let a = infer(&net, &g, 2).unwrap();
    let b = infer(&net, &g, 2).unwrap();
    assert_eq!(a, b);
    for m in &a.maps {
        assert!((0..g.bits().len()).all(|v| g.bits()[v] != 0 || m.get(v) == 0.0));
    }
    let empty = infer(&net, &VoxelGrid::empty(N), 2).unwrap();
    assert!(empty.maps.iter().all(|m| m.values().iter().all(|&v| v == 0.0)));
    assert!(empty.scores.iter().all(|&s| s == 0.0));
    assert!(infer(&net, &VoxelGrid::empty(8), 1).is_err());
}
