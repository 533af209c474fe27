//! Central finite-difference checks of every differentiable operator and of
//! whole networks, in 64-bit.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxpart::autodiff::{Tape, Var};
use voxpart::error::Result;
use voxpart::gradcheck::{grad_check, Coords};
use voxpart::network::{Mode, NetConfig, Network};
use voxpart::tensor::Tensor;

const SEEDS: u64 = 20;
const OP_TOL: f64 = 1e-4;
const NET_TOL: f64 = 1e-3;
const H: f64 = 1e-5;

fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so ReLU kinks are not straddled.
fn off_zero(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Reduce `y` to a scalar with fixed random weights so every output
/// coordinate contributes a distinct gradient.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let w = rand_tensor(t.value(y).dims(), &mut rng);
    t.weighted_sum(y, w)
}

fn check<F>(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, f: F, tol: f64)
where
    F: Fn(&mut Tape<f64>, &[Var], u64) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        let r = grad_check(&inputs, |t, v| f(t, v, seed), H, Coords::Sample { per_input: 60, seed }).unwrap();
        assert!(r.max_rel_err < tol, "{name} seed {seed}: {r:?}");
        worst = worst.max(r.max_rel_err);
    }
    println!("{name}: max relative error {worst:.2e} over {SEEDS} seeds");
}

pub fn conv3d_gradients() {
    for k in [1, 2, 3, 5] {
        check(
            &format!("conv3d k{k}"),
            |r| vec![rand_tensor(&[2, 2, 5, 4, 6], r), rand_tensor(&[3, 2, k, k, k], r), rand_tensor(&[3], r)],
            |t, v, s| {
                let y = t.conv3d(v[0], v[1], v[2])?;
                project(t, y, s)
            },
            OP_TOL,
        );
    }
}

pub fn pooling_and_upsampling_gradients() {
    check(
        "maxpool2",
        |r| vec![rand_tensor(&[2, 2, 4, 6, 4], r)],
        |t, v, s| {
            let y = t.maxpool2(v[0])?;
            project(t, y, s)
        },
        OP_TOL,
    );
    for k in [2, 3, 4] {
        check(
            &format!("avgpool k{k}"),
            |r| vec![rand_tensor(&[1, 2, 5, 4, 3], r)],
            |t, v, s| {
                let y = t.avgpool(v[0], k)?;
                project(t, y, s)
            },
            OP_TOL,
        );
    }
    check(
        "upsample2",
        |r| vec![rand_tensor(&[2, 2, 3, 2, 4], r)],
        |t, v, s| {
            let y = t.upsample2(v[0])?;
            project(t, y, s)
        },
        OP_TOL,
    );
    check(
        "global_max",
        |r| vec![rand_tensor(&[2, 3, 4, 3, 2], r)],
        |t, v, s| {
            let y = t.global_max(v[0])?;
            project(t, y, s)
        },
        OP_TOL,
    );
}

pub fn elementwise_gradients() {
    check(
        "relu",
        |r| vec![off_zero(&[2, 3, 3, 3, 3], r)],
        |t, v, s| {
            let y = t.relu(v[0]);
            project(t, y, s)
        },
        OP_TOL,
    );
    check(
        "sigmoid",
        |r| vec![rand_tensor(&[2, 3, 3, 3, 3], r).map(|x| 4.0 * x)],
        |t, v, s| {
            let y = t.sigmoid(v[0]);
            project(t, y, s)
        },
        1e-6,
    );
    check(
        "concat",
        |r| vec![rand_tensor(&[2, 2, 3, 2, 3], r), rand_tensor(&[2, 3, 3, 2, 3], r)],
        |t, v, s| {
            let y = t.concat(v[0], v[1])?;
            project(t, y, s)
        },
        OP_TOL,
    );
    check(
        "mask",
        |r| vec![rand_tensor(&[2, 3, 3, 3, 3], r)],
        |t, v, s| {
            let occ = t.leaf(Tensor::from_fn(&[2, 1, 3, 3, 3], |i| (i % 3 == 0) as u8 as f64), false);
            let y = t.mask(v[0], occ)?;
            project(t, y, s)
        },
        OP_TOL,
    );
    check(
        "linear",
        |r| vec![rand_tensor(&[3, 4], r), rand_tensor(&[2, 4], r), rand_tensor(&[2], r)],
        |t, v, s| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y, s)
        },
        OP_TOL,
    );
}

pub fn loss_gradients() {
    check(
        "softmax_cross_entropy",
        |r| vec![rand_tensor(&[4, 3], r).map(|x| 3.0 * x)],
        |t, v, _| t.softmax_cross_entropy(v[0], &[0, 2, 1, 2]),
        1e-5,
    );
    check(
        "binary_cross_entropy",
        |r| vec![rand_tensor(&[3, 2], r)],
        |t, v, _| {
            let p = t.sigmoid(v[0]);
            t.binary_cross_entropy(p, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        },
        OP_TOL,
    );
    check(
        "voxel_cross_entropy",
        |r| vec![Tensor::from_fn(&[2, 3, 3, 2, 2], |_| r.gen_range(0.05..0.95))],
        |t, v, _| {
            let occ = t.leaf(Tensor::from_fn(&[2, 1, 3, 2, 2], |i| (i % 4 != 1) as u8 as f64), false);
            let labels: Vec<usize> = (0..24).map(|i| (i * 7) % 3).collect();
            t.voxel_cross_entropy(v[0], &labels, occ)
        },
        OP_TOL,
    );
}

fn net_check(cfg: &NetConfig, mode: Mode, tol: f64) {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut net = Network::<f64>::build(cfg, seed).unwrap();
        net.attach_head(seed);
        // non-zero biases so gradients reach every parameter generically
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for (name, t) in net.params.iter_mut() {
            if name.ends_with(".b") {
                *t = Tensor::from_fn(t.dims(), |_| rng.gen_range(-0.1..0.1));
            }
        }
        let n = cfg.input_res;
        let occ = Tensor::from_fn(&[2, 1, n, n, n], |_| rng.gen_bool(0.4) as u8 as f64);
        let names: Vec<String> = net.params.names().map(String::from).collect();
        let inputs: Vec<Tensor<f64>> = net.params.iter().map(|(_, t)| t.clone()).collect();
        let labels: Vec<usize> = (0..2 * n * n * n).map(|i| (i * 13 / 7) % 2).collect();
        let f = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
            let vars: BTreeMap<String, Var> = names.iter().cloned().zip(v.iter().copied()).collect();
            let x = t.leaf(occ.clone(), false);
            let out = net.run(t, &vars, x, mode)?;
            match mode {
                Mode::Strong => t.voxel_cross_entropy(out.seg.unwrap(), &labels, x),
                _ => t.softmax_cross_entropy(out.scores.unwrap(), &[1, 0]),
            }
        };
        let r = grad_check(&inputs, f, 1e-6, Coords::Sample { per_input: 6, seed }).unwrap();
        assert!(r.max_rel_err < tol, "{:?} seed {seed}: {r:?} ({})", cfg.arch, names[r.worst.unwrap().0]);
        worst = worst.max(r.max_rel_err);
    }
    println!("network {} {mode:?}: max relative error {worst:.2e} over {SEEDS} seeds", cfg.arch);
}

fn tiny(arch: &str) -> NetConfig {
    NetConfig { arch: arch.parse().unwrap(), channels: 2, convs_per_block: 1, kernel: 3, input_res: 8, ..NetConfig::default() }
}

pub fn wu_net_end_to_end_gradients() {
    let cfg = tiny("shallow_u_stack(3)");
    net_check(&cfg, Mode::Weak { kernel: 2 }, NET_TOL);
    net_check(&cfg, Mode::Weak { kernel: 1 }, NET_TOL);
    net_check(&cfg, Mode::Strong, NET_TOL);
    net_check(&cfg, Mode::Phase1, NET_TOL);
}

pub fn variant_network_gradients() {
    let mut inc = tiny("shallow_u_stack(1)");
    inc.inception = true;
    net_check(&inc, Mode::Weak { kernel: 2 }, NET_TOL);
    net_check(&tiny("deep_u_stack(2,2)"), Mode::Weak { kernel: 2 }, NET_TOL);
}
