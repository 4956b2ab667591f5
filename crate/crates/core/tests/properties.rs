use pfa::cost::{audit_counts, pfa_param_count};
use pfa::cp::{cp_gd_fit, rank_probe, synthetic_low_rank, ProbeOptions, StepSize};
use pfa::pfa::PfaConfig;
use pfa::snn::{lif_sequence, tet_loss, cross_entropy, LifParams, TetParams};
use pfa::tensor::{self, DenseTensor};
use proptest::prelude::*;

fn tensor_strategy(dims: Vec<usize>, lo: f32, hi: f32) -> impl Strategy<Value = DenseTensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| DenseTensor::new(&dims, d).unwrap())
}

fn matrices() -> impl Strategy<Value = (DenseTensor, DenseTensor)> {
    (1usize..12, 1usize..12, 1usize..12).prop_flat_map(|(m, k, n)| {
        (tensor_strategy(vec![m, k], -10.0, 10.0), tensor_strategy(vec![k, n], -10.0, 10.0))
    })
}

fn conv_case() -> impl Strategy<Value = (DenseTensor, DenseTensor, usize)> {
    (1usize..3, 1usize..4, 1usize..4, 3usize..9, 3usize..9, 0usize..2).prop_flat_map(|(n, cin, cout, h, w, half)| {
        let k = 2 * half + 1;
        (
            tensor_strategy(vec![n, cin, h, w], -10.0, 10.0),
            tensor_strategy(vec![cout, cin, k, k], -10.0, 10.0),
            0..=half,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_equals_naive_loop((a, b) in matrices()) {
        let c = tensor::matmul(&a, &b).unwrap();
        let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f32;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                prop_assert_eq!(c.get(&[i, j]), s);
            }
        }
        prop_assert!(c.all_finite());
    }

    #[test]
    fn conv_equals_naive_loop((x, k, pad) in conv_case()) {
        let y = tensor::conv2d_batched(&x, &k, pad).unwrap();
        let (n, cin, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let (cout, ks) = (k.dims()[0], k.dims()[2]);
        let (oh, ow) = (h + 2 * pad - ks + 1, w + 2 * pad - ks + 1);
        prop_assert_eq!(y.dims(), &[n, cout, oh, ow]);
        for s in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f32;
                        for ci in 0..cin {
                            for a in 0..ks {
                                for b in 0..ks {
                                    let (iy, ix) = (oy as isize + a as isize - pad as isize, ox as isize + b as isize - pad as isize);
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += k.get(&[co, ci, a, b]) * x.get(&[s, ci, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        prop_assert_eq!(y.get(&[s, co, oy, ox]), acc);
                    }
                }
            }
        }
    }

    #[test]
    fn mean_over_equals_naive_loop(x in tensor_strategy(vec![3, 4, 5], -10.0, 10.0), axis in 0usize..3) {
        let m = tensor::mean_over(&x, &[axis]).unwrap();
        let d = x.dims().to_vec();
        let kept: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..d[kept[0]] {
            for j in 0..d[kept[1]] {
                let mut s = 0.0f32;
                for r in 0..d[axis] {
                    let mut idx = [0; 3];
                    idx[kept[0]] = i;
                    idx[kept[1]] = j;
                    idx[axis] = r;
                    s += x.get(&idx);
                }
                prop_assert_eq!(m.get(&[i, j]), s / d[axis] as f32);
            }
        }
    }

    #[test]
    fn outer3_equals_naive_loop(
        u in tensor_strategy(vec![4], -10.0, 10.0),
        v in tensor_strategy(vec![3], -10.0, 10.0),
        w in tensor_strategy(vec![5], -10.0, 10.0),
    ) {
        let o = tensor::outer3(&u, &v, &w).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                for k in 0..5 {
                    prop_assert_eq!(o.get(&[i, j, k]), u.data()[i] * v.data()[j] * w.data()[k]);
                }
            }
        }
    }

    #[test]
    fn broadcast_equals_materialized(
        a in tensor_strategy(vec![3, 4, 2], -10.0, 10.0),
        b in tensor_strategy(vec![1, 4, 1], -10.0, 10.0),
    ) {
        let expanded = DenseTensor::from_fn(&[3, 4, 2], |ix| b.get(&[0, ix[1], 0])).unwrap();
        prop_assert_eq!(tensor::add(&a, &b).unwrap(), tensor::add(&a, &expanded).unwrap());
        prop_assert_eq!(tensor::mul(&a, &b).unwrap(), tensor::mul(&a, &expanded).unwrap());
        prop_assert_eq!(tensor::sub(&a, &b).unwrap(), tensor::sub(&a, &expanded).unwrap());
    }

    #[test]
    fn ops_stay_finite(x in tensor_strategy(vec![2, 3, 4, 6], -10.0, 10.0)) {
        prop_assert!(tensor::sigmoid(&x).all_finite());
        prop_assert!(tensor::avg_pool2(&x).unwrap().all_finite());
        prop_assert!(tensor::mean_over(&x, &[1, 3]).unwrap().all_finite());
        prop_assert!(tensor::permute(&x, &[3, 1, 0, 2]).unwrap().all_finite());
        let s = tensor::sigmoid(&x);
        prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn permute_inverse_roundtrips(x in tensor_strategy(vec![2, 3, 4], -10.0, 10.0)) {
        let p = tensor::permute(&x, &[2, 0, 1]).unwrap();
        prop_assert_eq!(tensor::permute(&p, &[1, 2, 0]).unwrap(), x);
    }

    #[test]
    fn spikes_are_binary_and_reset_exact(x in tensor_strategy(vec![6, 5], -2.0, 4.0)) {
        let p = LifParams::default();
        let s = lif_sequence(&x, &p).unwrap();
        prop_assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
        // Replay the membrane and check the post-spike potential.
        let mut v = vec![p.v_reset; 5];
        for t in 0..6 {
            for i in 0..5 {
                let h = v[i] + (x.get(&[t, i]) - (v[i] - p.v_reset)) / p.tau;
                v[i] = if s.get(&[t, i]) == 1.0 { p.v_reset } else { h };
                if s.get(&[t, i]) == 1.0 {
                    prop_assert_eq!(v[i], p.v_reset);
                    prop_assert!(h >= p.v_threshold);
                }
            }
        }
    }

    #[test]
    fn tet_at_zero_lambda_is_mean_cross_entropy(o in tensor_strategy(vec![5, 4], -10.0, 10.0), label in 0usize..4) {
        let tet = tet_loss(&o, label, &TetParams { lambda: 0.0, ..TetParams::default() }).unwrap();
        let mean: f64 = (0..5)
            .map(|t| cross_entropy(&DenseTensor::new(&[4], o.data()[t * 4..t * 4 + 4].to_vec()).unwrap(), label).unwrap() as f64)
            .sum::<f64>() / 5.0;
        prop_assert!((tet as f64 - mean).abs() <= 1e-6 * mean.abs().max(1.0));
    }

    #[test]
    fn parameter_count_matches_formula(c in 1usize..64, t in 1usize..16, r in 1usize..16, half in 0usize..3) {
        let k = 2 * half + 1;
        let cfg = PfaConfig::new(r, t, c, 4, 4).with_kernel(k);
        prop_assert_eq!(pfa_param_count(&cfg).params, (c * r + t * r + k * k * t * r) as u64);
    }

    #[test]
    fn audit_agrees(r in 1usize..5, t in 1usize..5, c in 1usize..6, h in 1usize..6, w in 1usize..6, half in 0usize..2) {
        let cfg = PfaConfig::new(r, t, c, h, w).with_kernel(2 * half + 1);
        prop_assert!(audit_counts(&cfg).unwrap().matches);
    }
}

#[test]
fn params_linear_in_channels() {
    let counts: Vec<i64> = (1..30).map(|c| pfa_param_count(&PfaConfig::new(4, 6, c, 8, 8)).params as i64).collect();
    assert!(counts.windows(3).all(|w| w[2] - 2 * w[1] + w[0] == 0));
}

#[test]
fn best_error_non_increasing_in_rank_on_dense_targets() {
    use rand::SeedableRng;
    for seed in 0..3 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let target = DenseTensor::uniform(&[6, 5, 4], -1.0, 1.0, &mut rng).unwrap();
        let opts = ProbeOptions { seed, ..ProbeOptions::default() };
        let report = rank_probe(&target, &[1, 2, 3, 4, 5], &opts).unwrap();
        for w in report.entries.windows(2) {
            assert!(w[1].error <= w[0].error + 1e-6, "seed {seed}: {:?}", report.entries);
        }
    }
}

#[test]
fn fits_recover_low_rank_targets() {
    for k in [1, 2, 3] {
        let target = synthetic_low_rank([12, 10, 8], k, 40 + k as u64).unwrap();
        let best = (0..3)
            .map(|s| cp_gd_fit(&target, k + 1, StepSize::default(), 1000, s).unwrap().error)
            .fold(f64::INFINITY, f64::min);
        assert!(best / target.norm() < 1e-2, "K={k}: {best}");
    }
}

#[test]
fn probe_is_deterministic() {
    let target = synthetic_low_rank([8, 7, 6], 2, 3).unwrap();
    let opts = ProbeOptions { iters: 200, ..ProbeOptions::default() };
    assert_eq!(rank_probe(&target, &[1, 2, 3], &opts).unwrap(), rank_probe(&target, &[1, 2, 3], &opts).unwrap());
}
