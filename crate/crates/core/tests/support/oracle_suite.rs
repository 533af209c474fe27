//! Nested-loop reference implementations compared against the fast operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxpart::ops::*;
use voxpart::tensor::Tensor;

fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

fn rand_dims(rng: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    [rng.gen_range(1..=max), rng.gen_range(1..=max), rng.gen_range(1..=max)]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let [b, cin, d, h, wd] = <[usize; 5]>::try_from(x.dims()).unwrap();
    let (cout, k) = (w.dims()[0], w.dims()[2]);
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(&[b, cout, d, h, wd]);
    for bi in 0..b {
        for co in 0..cout {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = bias.data()[co];
                        for ci in 0..cin {
                            for a in 0..k {
                                for bb in 0..k {
                                    for c in 0..k {
                                        let (iz, iy, ix) = (
                                            z as isize + a as isize - p,
                                            y as isize + bb as isize - p,
                                            xx as isize + c as isize - p,
                                        );
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        acc += w.at(&[co, ci, a, bb, c]) * x.at(&[bi, ci, iz as usize, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[bi, co, z, y, xx], acc);
                    }
                }
            }
        }
    }
    out
}

pub fn conv_identity_kernel() {
    let x = Tensor::from_fn(&[1, 1, 4, 4, 4], |i| i as f64);
    let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]);
    w.set(&[0, 0, 1, 1, 1], 1.0);
    assert_eq!(conv3d(&x, &w, &Tensor::zeros(&[1])).unwrap(), x);
}

pub fn conv_counts_in_bounds_taps() {
    let x = Tensor::full(&[1, 1, 5, 5, 5], 1.0f64);
    let w = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
    let y = conv3d(&x, &w, &Tensor::zeros(&[1])).unwrap();
    assert_eq!(y.at(&[0, 0, 2, 2, 2]), 27.0);
    assert_eq!(y.at(&[0, 0, 0, 0, 0]), 8.0);
    assert_eq!(y.at(&[0, 0, 4, 4, 4]), 8.0);
}

pub fn conv_matches_direct_loops() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [d, h, w] = rand_dims(&mut rng, 8);
        let (b, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let k = [1, 2, 3, 5][seed as usize % 4];
        let x = rand_tensor(&[b, cin, d, h, w], &mut rng);
        let wt = rand_tensor(&[cout, cin, k, k, k], &mut rng);
        let bias = rand_tensor(&[cout], &mut rng);
        let fast = conv3d(&x, &wt, &bias).unwrap();
        let slow = direct_conv(&x, &wt, &bias);
        for (a, e) in fast.data().iter().zip(slow.data()) {
            assert!(close(*a, *e, 1e-5), "seed {seed}: {a} vs {e}");
        }
        let fast32 = conv3d(&x.cast::<f32>(), &wt.cast::<f32>(), &bias.cast::<f32>()).unwrap();
        for (a, e) in fast32.data().iter().zip(slow.data()) {
            assert!(close(*a as f64, *e, 1e-5), "f32 seed {seed}: {a} vs {e}");
        }
    }
}

pub fn conv_two_by_three_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = rand_tensor(&[2, 3, 6, 6, 6], &mut rng);
    let w = rand_tensor(&[4, 3, 3, 3, 3], &mut rng);
    let b = rand_tensor(&[4], &mut rng);
    let fast = conv3d(&x.cast::<f32>(), &w.cast::<f32>(), &b.cast::<f32>()).unwrap();
    let slow = direct_conv(&x, &w, &b);
    for (a, e) in fast.data().iter().zip(slow.data()) {
        assert!(close(*a as f64, *e, 1e-5));
    }
}

pub fn conv_rejects_mismatched_channels() {
    let x = Tensor::<f32>::zeros(&[1, 2, 4, 4, 4]);
    let w = Tensor::<f32>::zeros(&[1, 3, 3, 3, 3]);
    match conv3d(&x, &w, &Tensor::zeros(&[1])) {
        Err(voxpart::error::Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![1, 2, 4, 4, 4]);
            assert_eq!(rhs, vec![1, 3, 3, 3, 3]);
        }
        other => panic!("{:?}", other.map(|t| t.dims().to_vec())),
    }
}

pub fn maxpool_matches_block_scan() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [rng.gen_range(1..=4) * 2, rng.gen_range(1..=4) * 2, rng.gen_range(1..=4) * 2];
        let x = rand_tensor(&[1, 2, dims[0], dims[1], dims[2]], &mut rng);
        let (y, _) = maxpool2(&x).unwrap();
        for c in 0..2 {
            for z in 0..dims[0] / 2 {
                for yy in 0..dims[1] / 2 {
                    for xx in 0..dims[2] / 2 {
                        let mut m = f64::NEG_INFINITY;
                        for o in 0..8 {
                            m = m.max(x.at(&[0, c, 2 * z + (o >> 2), 2 * yy + ((o >> 1) & 1), 2 * xx + (o & 1)]));
                        }
                        assert_eq!(y.at(&[0, c, z, yy, xx]), m);
                    }
                }
            }
        }
    }
}

pub fn maxpool_trivial_cases() {
    let (y, _) = maxpool2(&Tensor::full(&[1, 1, 4, 4, 4], 3.0f32)).unwrap();
    assert_eq!(y, Tensor::full(&[1, 1, 2, 2, 2], 3.0));
    let mut x = Tensor::<f32>::zeros(&[1, 1, 4, 4, 4]);
    x.set(&[0, 0, 1, 2, 3], 5.0);
    let (y, _) = maxpool2(&x).unwrap();
    assert_eq!(y.data().iter().filter(|&&v| v == 5.0).count(), 1);
    assert!(maxpool2(&Tensor::<f32>::zeros(&[1, 1, 3, 4, 4])).is_err());
}

pub fn maxpool_ties_route_to_lowest_index() {
    let x = Tensor::full(&[1, 1, 2, 2, 2], 1.0f64);
    let (_, arg) = maxpool2(&x).unwrap();
    let g = maxpool2_backward(x.dims(), &arg, &Tensor::full(&[1, 1, 1, 1, 1], 1.0));
    assert_eq!(g.data()[0], 1.0);
    assert_eq!(g.sum(), 1.0);
}

pub fn avgpool_matches_window_mean() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [d, h, w] = rand_dims(&mut rng, 8);
        let k = rng.gen_range(1..=4);
        let x = rand_tensor(&[1, 1, d, h, w], &mut rng);
        let y = avgpool(&x, k).unwrap();
        let lo = |v: usize| v as isize - (k / 2) as isize;
        for z in 0..d {
            for yy in 0..h {
                for xx in 0..w {
                    let (mut s, mut n) = (0.0, 0.0);
                    for a in lo(z)..lo(z) + k as isize {
                        for b in lo(yy)..lo(yy) + k as isize {
                            for c in lo(xx)..lo(xx) + k as isize {
                                if a >= 0 && b >= 0 && c >= 0 && a < d as isize && b < h as isize && c < w as isize {
                                    s += x.at(&[0, 0, a as usize, b as usize, c as usize]);
                                    n += 1.0;
                                }
                            }
                        }
                    }
                    assert!(close(y.at(&[0, 0, z, yy, xx]), s / n, 1e-6), "seed {seed} k {k}");
                }
            }
        }
    }
}

pub fn avgpool_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&[1, 2, 3, 4, 5], &mut rng);
    assert_eq!(avgpool(&x, 1).unwrap(), x);
    let c = Tensor::full(&[1, 1, 5, 5, 5], 0.25f64);
    for k in 2..6 {
        for v in avgpool(&c, k).unwrap().data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
    assert!(avgpool(&x, 0).is_err());
}

fn interp(input: &Tensor<f64>, c: usize, p: [f64; 3]) -> f64 {
    let n = [input.dims()[2], input.dims()[3], input.dims()[4]];
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut wgt = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = p[a].floor() as usize;
            let t = p[a] - f as f64;
            let hi = (corner >> a) & 1 == 1;
            idx[a] = if hi { (f + 1).min(n[a] - 1) } else { f };
            wgt *= if hi { t } else { 1.0 - t };
        }
        acc += wgt * input.at(&[0, c, idx[0], idx[1], idx[2]]);
    }
    acc
}

pub fn upsample_matches_formula() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [d, h, w] = rand_dims(&mut rng, 4);
        let x = rand_tensor(&[1, 2, d, h, w], &mut rng);
        let y = upsample2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2 * d, 2 * h, 2 * w]);
        let map = |u: usize, n: usize| if n == 1 { 0.0 } else { u as f64 * (n - 1) as f64 / (2 * n - 1) as f64 };
        for c in 0..2 {
            for z in 0..2 * d {
                for yy in 0..2 * h {
                    for xx in 0..2 * w {
                        let e = interp(&x, c, [map(z, d), map(yy, h), map(xx, w)]);
                        assert!(close(y.at(&[0, c, z, yy, xx]), e, 1e-6), "seed {seed}");
                    }
                }
            }
        }
    }
}

pub fn upsample_ramp_and_constant() {
    let x = Tensor::new(&[1, 1, 2, 1, 1], vec![0.0f64, 1.0]).unwrap();
    let y = upsample2(&x).unwrap();
    let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    for (i, b) in want.iter().enumerate() {
        for (yy, xx) in [(0, 0), (1, 1)] {
            assert!((y.at(&[0, 0, i, yy, xx]) - b).abs() < 1e-12);
        }
    }
    let c = upsample2(&Tensor::full(&[1, 1, 3, 2, 2], 0.7f64)).unwrap();
    assert!(c.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
}

pub fn global_max_matches_scan() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [d, h, w] = rand_dims(&mut rng, 8);
        let x = rand_tensor(&[2, 3, d, h, w], &mut rng);
        let (y, _) = global_max(&x).unwrap();
        let s = d * h * w;
        for bc in 0..6 {
            let m = x.data()[bc * s..(bc + 1) * s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(y.data()[bc], m);
        }
    }
    let mut hot = Tensor::<f32>::zeros(&[1, 1, 4, 4, 4]);
    hot.set(&[0, 0, 3, 0, 2], 9.0);
    assert_eq!(global_max(&hot).unwrap().0.data(), &[9.0]);
    assert_eq!(global_max(&Tensor::full(&[1, 2, 2, 2, 2], 4.0f32)).unwrap().0.data(), &[4.0, 4.0]);
}

pub fn mask_and_concat_are_exact() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [d, h, w] = rand_dims(&mut rng, 8);
        let (ca, cb) = (rng.gen_range(1..=3), rng.gen_range(0..=3));
        let a = rand_tensor(&[2, ca, d, h, w], &mut rng);
        let b = rand_tensor(&[2, cb, d, h, w], &mut rng);
        let cat = concat_channels(&a, &b).unwrap();
        for bi in 0..2 {
            let item = cat.batch_item(bi);
            assert_eq!(item.channels(0, ca).unwrap(), a.batch_item(bi));
            assert_eq!(item.channels(ca, cb).unwrap(), b.batch_item(bi));
        }
        let occ = Tensor::from_fn(&[2, 1, d, h, w], |_| rng.gen_bool(0.4) as u8 as f64);
        let m = mask_mul(&a, &occ).unwrap();
        for bi in 0..2 {
            for c in 0..ca {
                for v in 0..d * h * w {
                    let i = (bi * ca + c) * d * h * w + v;
                    assert_eq!(m.data()[i], a.data()[i] * occ.data()[bi * d * h * w + v]);
                }
            }
        }
    }
    let x = Tensor::<f32>::full(&[1, 12, 2, 2, 2], 1.0);
    assert_eq!(concat_channels(&x, &x).unwrap().dims(), &[1, 24, 2, 2, 2]);
    assert!(concat_channels(&x, &Tensor::zeros(&[1, 1, 2, 2, 3])).is_err());
}

pub fn linear_matches_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[4, 5], &mut rng);
    let w = rand_tensor(&[3, 5], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    let y = linear(&x, &w, &b).unwrap();
    for i in 0..4 {
        for o in 0..3 {
            let e: f64 = (0..5).map(|j| x.at(&[i, j]) * w.at(&[o, j])).sum::<f64>() + b.data()[o];
            assert!(close(y.at(&[i, o]), e, 1e-12));
        }
    }
    let eye = Tensor::from_fn(&[5, 5], |i| (i / 5 == i % 5) as u8 as f64);
    assert_eq!(linear(&x, &eye, &Tensor::zeros(&[5])).unwrap(), x);
    let yb = linear(&x, &Tensor::zeros(&[3, 5]), &b).unwrap();
    for i in 0..4 {
        assert_eq!(&yb.data()[i * 3..i * 3 + 3], b.data());
    }
}

pub fn activations_and_losses() {
    let x = Tensor::new(&[3], vec![-1.0f64, 0.0, 2.0]).unwrap();
    assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
    assert_eq!(sigmoid_scalar(0.0f64), 0.5);
    let (l, _) = softmax_cross_entropy(&Tensor::new(&[1, 2], vec![0.0f64, 0.0]).unwrap(), &[1]).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-12);
    let (l, _) = softmax_cross_entropy(&Tensor::new(&[1, 2], vec![1000.0f64, -1000.0]).unwrap(), &[0]).unwrap();
    assert!(l.is_finite() && l.abs() < 1e-12);
    assert!(softmax_cross_entropy(&Tensor::new(&[1, 2], vec![0.0f64, 0.0]).unwrap(), &[2]).is_err());
}

pub fn voxel_cross_entropy_matches_summation() {
    // perfect one-hot predictions
    let seg = Tensor::new(&[1, 2, 1, 1, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
    let occ = Tensor::full(&[1, 1, 1, 1, 2], 1.0);
    assert!(voxel_cross_entropy(&seg, &[0, 1], &occ).unwrap() <= 1e-6);
    // uniform over four classes
    let seg = Tensor::full(&[1, 4, 2, 2, 2], 0.3f64);
    let occ = Tensor::full(&[1, 1, 2, 2, 2], 1.0);
    let l = voxel_cross_entropy(&seg, &[2; 8], &occ).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-12);
    // random case
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (k, s) = (3, 4 * 3 * 2);
    let seg = Tensor::from_fn(&[2, k, 4, 3, 2], |_| rng.gen_range(0.05..0.95));
    let occ = Tensor::from_fn(&[2, 1, 4, 3, 2], |i| (i % 3 != 0) as u8 as f64);
    let labels: Vec<usize> = (0..2 * s).map(|i| i % k).collect();
    let mut sum = 0.0;
    let mut n = 0.0;
    for b in 0..2 {
        for v in 0..s {
            if occ.data()[b * s + v] == 0.0 {
                continue;
            }
            let z: f64 = (0..k).map(|c| seg.data()[(b * k + c) * s + v]).sum();
            let p = seg.data()[(b * k + labels[b * s + v]) * s + v] / z;
            sum -= p.clamp(1e-7, 1.0 - 1e-7).ln();
            n += 1.0;
        }
    }
    assert!(close(voxel_cross_entropy(&seg, &labels, &occ).unwrap(), sum / n, 1e-6));
    assert!(voxel_cross_entropy(&seg, &labels, &Tensor::zeros(occ.dims())).is_err());
}

pub fn parallel_and_serial_conv_are_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&[4, 3, 8, 8, 8], &mut rng).cast::<f32>();
    let w = rand_tensor(&[5, 3, 3, 3, 3], &mut rng).cast::<f32>();
    let b = rand_tensor(&[5], &mut rng).cast::<f32>();
    let g = rand_tensor(&[4, 5, 8, 8, 8], &mut rng).cast::<f32>();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let y = conv3d(&x, &w, &b).unwrap();
            let gr = conv3d_backward(&x, &w, &b, &g, true).unwrap();
            (y, gr.input.unwrap(), gr.weight, gr.bias)
        })
    };
    let (a, b1) = (run(1), run(4));
    assert_eq!(a.0.data(), b1.0.data());
    assert_eq!(a.1.data(), b1.1.data());
    assert_eq!(a.2.data(), b1.2.data());
    assert_eq!(a.3.data(), b1.3.data());
}
