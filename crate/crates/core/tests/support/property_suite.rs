//! Property suites over randomly generated maps, grids, point sets and checkpoints.

use proptest::prelude::*;

use voxpart::evaluation::{pr_counts, pr_curve_exact, uniform_thresholds, EvalItem, PrCurve};
use voxpart::network::{Arch, Mode, NetConfig, Network};
use voxpart::postprocess::{detect_symmetry_plane, symmetrize_map, threshold_map, Axis, SymmetryPlane};
use voxpart::retrieval::{distance_matrix, part_distance, rank_search, SalientSet};
use voxpart::segmap::{SegFile, SegMap};
use voxpart::voxel::{binvox, VoxelGrid};
use voxpart::{Tensor32, Trainer32};

fn grid(n: usize) -> impl Strategy<Value = VoxelGrid> {
    prop::collection::vec(prop::bool::weighted(0.4), n * n * n)
        .prop_map(move |b| VoxelGrid::from_bits(n, b.into_iter().map(u8::from).collect()).unwrap())
}

fn map(n: usize) -> impl Strategy<Value = SegMap> {
    prop::collection::vec(0f32..=1.0, n * n * n).prop_map(move |v| SegMap::new(n, v).unwrap())
}

fn plane(n: usize) -> impl Strategy<Value = SymmetryPlane> {
    (0..3usize, 0..2 * n).prop_map(|(a, p)| SymmetryPlane { axis: Axis::ALL[a], position: p as f64 / 2.0, score: 0.0 })
}

fn salient() -> impl Strategy<Value = SalientSet> {
    prop::collection::vec(((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 0.1..1.0f64), 1..12).prop_map(|pts| {
        let points: Vec<[f64; 3]> = pts.iter().map(|((x, y, z), _)| [*x, *y, *z]).collect();
        let weights: Vec<f64> = pts.iter().map(|(_, w)| *w).collect();
        let total: f64 = weights.iter().sum();
        let mut centroid = [0.0; 3];
        for (p, w) in points.iter().zip(&weights) {
            for a in 0..3 {
                centroid[a] += p[a] * w / total;
            }
        }
        SalientSet { points, weights, centroid }
    })
}

fn shifted(s: &SalientSet, d: [f64; 3]) -> SalientSet {
    let mv = |p: [f64; 3]| [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
    SalientSet { points: s.points.iter().map(|&p| mv(p)).collect(), weights: s.weights.clone(), centroid: mv(s.centroid) }
}

pub fn masking_zeroes_unoccupied() {
    proptest!(ProptestConfig::with_cases(64), |(m in map(5), g in grid(5))| {
            let out = m.masked(&g).unwrap();
            for v in 0..125 {
                prop_assert!(g.bits()[v] != 0 || out.get(v) == 0.0);
                prop_assert!(g.bits()[v] == 0 || out.get(v) == m.get(v));
            }
    });
}

pub fn symmetrize_is_idempotent() {
    proptest!(ProptestConfig::with_cases(64), |(m in map(5), g in grid(5), p in plane(5))| {
            let once = symmetrize_map(&m, &p, &g).unwrap();
            prop_assert_eq!(symmetrize_map(&once, &p, &g).unwrap(), once.clone());
            for v in 0..125 {
                prop_assert!(g.bits()[v] == 0 || once.get(v) >= m.get(v));
            }
    });
}

pub fn symmetrize_is_monotone() {
    proptest!(ProptestConfig::with_cases(64), |(a in map(4), b in map(4), g in grid(4), p in plane(4))| {
            let hi = SegMap::new(4, a.values().iter().zip(b.values()).map(|(x, y)| x.max(*y)).collect()).unwrap();
            let (sa, sh) = (symmetrize_map(&a, &p, &g).unwrap(), symmetrize_map(&hi, &p, &g).unwrap());
            prop_assert!(sa.values().iter().zip(sh.values()).all(|(x, y)| x <= y));
    });
}

pub fn threshold_masks_shrink() {
    proptest!(ProptestConfig::with_cases(64), |(m in map(5), g in grid(5), t1 in 0.0..=1.0f64, t2 in 0.0..=1.0f64)| {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = threshold_map(&m, lo, &g).unwrap();
            let b = threshold_map(&m, hi, &g).unwrap();
            prop_assert!(b.is_subset_of(&a));
            prop_assert!(a.is_subset_of(&g));
    });
}

pub fn pr_counts_are_additive() {
    proptest!(ProptestConfig::with_cases(64), |(ms in prop::collection::vec((map(3), grid(3), grid(3)), 2..5), cut in 1usize..4)| {
            let items: Vec<EvalItem> = ms.iter().map(|(m, gt, occ)| EvalItem { map: m, gt, occupancy: occ }).collect();
            let cut = cut.min(items.len() - 1);
            let th = uniform_thresholds(21);
            let mut left = pr_counts(&items[..cut], &th).unwrap();
            left.add(&pr_counts(&items[cut..], &th).unwrap()).unwrap();
            let whole = pr_counts(&items, &th).unwrap();
            prop_assert_eq!(&left, &whole);
            if whole.positives() > 0 {
                prop_assert_eq!(PrCurve::from_counts(&left).unwrap(), PrCurve::from_counts(&whole).unwrap());
            }
    });
}

pub fn auc_ignores_monotone_transforms() {
    proptest!(ProptestConfig::with_cases(64), |(
        ks in prop::collection::vec(0u32..=1000, 64),
        gt in grid(4),
        which in 0..3usize,
    )| {
            prop_assume!(gt.count() > 0);
            let f = |v: f32| match which {
                0 => v * v,
                1 => 1.0 - (1.0 - v) * (1.0 - v),
                _ => v.sqrt(),
            };
            let vals: Vec<f32> = ks.iter().map(|&k| k as f32 / 1000.0).collect();
            let occ = VoxelGrid::from_bits(4, vec![1; 64]).unwrap();
            let a = SegMap::new(4, vals.clone()).unwrap();
            let b = SegMap::new(4, vals.iter().map(|&v| f(v)).collect()).unwrap();
            let ca = pr_curve_exact(&[EvalItem { map: &a, gt: &gt, occupancy: &occ }]).unwrap();
            let cb = pr_curve_exact(&[EvalItem { map: &b, gt: &gt, occupancy: &occ }]).unwrap();
            prop_assert_eq!(ca.auc, cb.auc);
            prop_assert_eq!(ca.precision, cb.precision);
    });
}

pub fn part_distance_is_metric_like() {
    proptest!(ProptestConfig::with_cases(64), |(a in salient(), b in salient(), d in (-9.0..9.0f64, -9.0..9.0f64, -9.0..9.0f64))| {
            let ab = part_distance(&a, &b).unwrap();
            prop_assert!(ab >= 0.0 && ab.is_finite());
            prop_assert!((ab - part_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(part_distance(&a, &a).unwrap().abs() < 1e-12);
            let moved = shifted(&b, [d.0, d.1, d.2]);
            prop_assert!((part_distance(&a, &moved).unwrap() - ab).abs() < 1e-9);
            prop_assert!(part_distance(&a, &shifted(&a, [d.0, d.1, d.2])).unwrap() < 1e-9);
    });
}

pub fn ranking_is_a_deterministic_total_order() {
    proptest!(ProptestConfig::with_cases(64), |(sets in prop::collection::vec(salient(), 2..8), k in 1usize..10)| {
            let corpus: Vec<(String, SalientSet)> = sets.into_iter().enumerate().map(|(i, s)| (format!("s{i:02}"), s)).collect();
            let r = rank_search("s00", &corpus, k).unwrap();
            prop_assert_eq!(&r, &rank_search("s00", &corpus, k).unwrap());
            prop_assert_eq!(r.len(), k.min(corpus.len()));
            prop_assert_eq!(r[0].1, 0.0);
            for w in r.windows(2) {
                prop_assert!(w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            }
            let m = distance_matrix(&corpus).unwrap();
            let n = m.ids.len();
            for i in 0..n {
                prop_assert_eq!(m.get(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!(m.get(i, j).is_finite());
                }
            }
    });
}

pub fn binvox_roundtrip() {
    proptest!(ProptestConfig::with_cases(64), |(g in grid(6), t in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64), s in 0.1..10.0f64)| {
            let mut g = g;
            g.translate = [t.0, t.1, t.2];
            g.scale = s;
            prop_assert_eq!(binvox::decode(&binvox::encode(&g)).unwrap(), g);
    });
}

pub fn seg_roundtrip() {
    proptest!(ProptestConfig::with_cases(64), |(a in map(4), b in map(4))| {
            let f = SegFile { maps: vec![("rest".into(), a), ("armrest".into(), b)] };
            prop_assert_eq!(SegFile::decode(&f.encode().unwrap()).unwrap(), f);
    });
}

pub fn detected_plane_is_a_half_voxel() {
    proptest!(ProptestConfig::with_cases(64), |(g in grid(5))| {
            prop_assume!(g.count() > 0);
            let p = detect_symmetry_plane(&g).unwrap();
            prop_assert_eq!((p.position * 2.0).fract(), 0.0);
            prop_assert!((0.0..=1.0).contains(&p.score));
    });
}

pub fn network_maps_vanish_off_the_shape() {
    proptest!(ProptestConfig::with_cases(8), |(g in grid(8), seed in 0u64..1000)| {
            let cfg = NetConfig {
                arch: Arch::ShallowUStack { stack: 2 },
                channels: 2,
                convs_per_block: 1,
                kernel: 3,
                input_res: 8,
                ..NetConfig::default()
            };
            let net = Network::<f32>::build(&cfg, seed).unwrap();
            let x: Tensor32 = g.to_tensor();
            let x = x.reshape(&[1, 1, 8, 8, 8]).unwrap();
            let r = net.forward(&x, Mode::Weak { kernel: 2 }).unwrap();
            for m in &r.branch_maps {
                for v in 0..512 {
                    prop_assert!(g.bits()[v] != 0 || m.data()[v] == 0.0);
                }
            }
    });
}

pub fn checkpoint_roundtrip() {
    proptest!(ProptestConfig::with_cases(8), |(seed in 0u64..10_000, step in 0usize..3)| {
            let cfg = NetConfig { arch: Arch::ShallowUStack { stack: 1 }, channels: 2, convs_per_block: 1, kernel: 3, input_res: 8, ..NetConfig::default() };
            let mut t = Trainer32::new(Network::build(&cfg, seed).unwrap(), Default::default()).unwrap();
            t.epoch = step;
            let dir = tempfile::tempdir().unwrap();
            t.save(dir.path()).unwrap();
            let u = Trainer32::load(dir.path(), Some(&cfg)).unwrap();
            prop_assert_eq!(&u.net.params, &t.net.params);
            prop_assert_eq!((u.stage, u.epoch, u.cfg.clone()), (t.stage, t.epoch, t.cfg.clone()));
            let again = tempfile::tempdir().unwrap();
            u.save(again.path()).unwrap();
            for f in ["checkpoint.txt", "tensors.bin"] {
                prop_assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
            }
    });
}
