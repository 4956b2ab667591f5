//! Independent reference implementations shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use nalgebra::DMatrix;
use pfa::cp::{cp_gradient, cp_loss, CpFactors};
use pfa::pfa::{amc_compose_var, pfa_forward, pfa_forward_var, PfaConfig, PfaVars, PfaWeights, ProjectionSet, ProjectionVars};
use pfa::snn::{lif_sequence, lif_sequence_var, LifParams};
use pfa::tensor::{DenseTensor, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn widen(t: &DenseTensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn probe_dot(out: &DenseTensor, probe: &DenseTensor) -> f64 {
    out.data().iter().zip(probe.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Central differences of `f` with respect to every element of `inputs[which]`.
pub fn numeric_grad(inputs: &[DenseTensor], which: usize, h: f32, f: &dyn Fn(&[DenseTensor]) -> f64) -> Vec<f64> {
    let mut work = inputs.to_vec();
    (0..inputs[which].len())
        .map(|i| {
            let base = inputs[which].data()[i];
            work[which].data_mut()[i] = base + h;
            let up = f(&work);
            work[which].data_mut()[i] = base - h;
            let down = f(&work);
            work[which].data_mut()[i] = base;
            (up - down) / (2.0 * h as f64)
        })
        .collect()
}

/// Worst relative error over all inputs between the tape gradient of
/// `sum(probe * build(inputs))` and central differences of the same graph.
pub fn check_tape(inputs: &[DenseTensor], h: f32, seed: u64, build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let probe = DenseTensor::uniform(tape.value(out).dims(), -1.0, 1.0, &mut rng(seed)).unwrap();
    let pv = tape.leaf(probe.clone());
    let weighted = tape.mul(out, pv).unwrap();
    let loss = tape.sum(weighted);
    tape.backward(loss).unwrap();

    let eval = |xs: &[DenseTensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let o = build(&mut t, &vs);
        probe_dot(t.value(o), &probe)
    };
    (0..inputs.len())
        .map(|i| {
            let analytic = tape.grad(vars[i]).map(widen).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
            relative_error(&analytic, &numeric_grad(inputs, i, h, &eval))
        })
        .fold(0.0, f64::max)
}

pub fn grad_sigmoid(seed: u64) -> f64 {
    let x = DenseTensor::uniform(&[4, 5], -3.0, 3.0, &mut rng(seed)).unwrap();
    check_tape(&[x], 1e-2, seed + 1, &|t, v| t.sigmoid(v[0]))
}

pub fn grad_conv2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = DenseTensor::uniform(&[2, 3, 5, 6], -1.0, 1.0, &mut r).unwrap();
    let k = DenseTensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r).unwrap();
    check_tape(&[x, k], 1e-2, seed + 1, &|t, v| t.conv2d(v[0], v[1], 1).unwrap())
}

pub fn grad_matmul(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = DenseTensor::uniform(&[3, 7], -1.0, 1.0, &mut r).unwrap();
    let b = DenseTensor::uniform(&[7, 4], -1.0, 1.0, &mut r).unwrap();
    check_tape(&[a, b], 1e-2, seed + 1, &|t, v| t.matmul(v[0], v[1]).unwrap())
}

/// The surrogate path is the exact gradient of a smooth stand-in: spikes
/// replaced by `1/2 + atan(pi/2 * alpha * (H - v_th)) / pi`, with the reset
/// pattern frozen at the one the binary forward produced.
pub fn grad_lif(seed: u64) -> f64 {
    let p = LifParams::default();
    let (steps, width) = (6usize, 10usize);
    let x = DenseTensor::uniform(&[steps, width], -0.5, 3.0, &mut rng(seed)).unwrap();
    let spikes = lif_sequence(&x, &p).unwrap();
    let probe = DenseTensor::uniform(&[steps, width], -1.0, 1.0, &mut rng(seed + 1)).unwrap();

    let smooth = |xs: &[f64]| -> f64 {
        let (tau, vth, vr, alpha) = (p.tau as f64, p.v_threshold as f64, p.v_reset as f64, p.surrogate_alpha as f64);
        let mut v = vec![vr; width];
        let mut acc = 0.0;
        for t in 0..steps {
            for i in 0..width {
                let k = t * width + i;
                let h = v[i] + (xs[k] - (v[i] - vr)) / tau;
                let s = 0.5 + (std::f64::consts::FRAC_PI_2 * alpha * (h - vth)).atan() / std::f64::consts::PI;
                acc += probe.data()[k] as f64 * s;
                v[i] = if spikes.data()[k] == 1.0 { vr } else { h };
            }
        }
        acc
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let s = lif_sequence_var(&mut tape, xv, &p).unwrap();
    let pv = tape.leaf(probe.clone());
    let w = tape.mul(s, pv).unwrap();
    let l = tape.sum(w);
    tape.backward(l).unwrap();
    let analytic = widen(tape.grad(xv).unwrap());

    let base = widen(&x);
    let h = 1e-6;
    let numeric: Vec<f64> = (0..base.len())
        .map(|i| {
            let mut up = base.clone();
            let mut down = base.clone();
            up[i] += h;
            down[i] -= h;
            (smooth(&up) - smooth(&down)) / (2.0 * h)
        })
        .collect();
    relative_error(&analytic, &numeric)
}

pub fn grad_amc_compose(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (hw, c, t, rank) = (6, 4, 5, 3);
    let us = DenseTensor::uniform(&[hw, rank], 0.0, 1.0, &mut r).unwrap();
    let uc = DenseTensor::uniform(&[rank, c], 0.0, 1.0, &mut r).unwrap();
    let ut = DenseTensor::uniform(&[rank, t], 0.0, 1.0, &mut r).unwrap();
    check_tape(&[us, uc, ut], 1e-2, seed + 1, &|tape, v| {
        amc_compose_var(
            tape,
            &ProjectionVars {
                spatial: v[0],
                channel: v[1],
                temporal: v[2],
            },
        )
        .unwrap()
    })
}

/// Tape gradient of the full module against differences of the plain forward.
pub fn grad_pfa_forward(seed: u64) -> f64 {
    let cfg = PfaConfig::new(2, 3, 4, 4, 5);
    let mut r = rng(seed);
    let x = DenseTensor::uniform(&cfg.input_dims(), 0.0, 1.0, &mut r).unwrap();
    let w = PfaWeights::init(&cfg, &mut r).unwrap();
    // Larger weights keep the sigmoids away from their flat centre.
    let w = PfaWeights {
        temporal: w.temporal.scale(3.0),
        channel: w.channel.scale(3.0),
        spatial: w.spatial.scale(3.0),
    };
    let probe = DenseTensor::uniform(&cfg.input_dims(), -1.0, 1.0, &mut rng(seed + 1)).unwrap();
    let inputs = [x, w.temporal.clone(), w.channel.clone(), w.spatial.clone()];

    let mut tape = Tape::new();
    let xv = tape.leaf(inputs[0].clone());
    let wv = PfaVars::record(&mut tape, &w);
    let (out, _) = pfa_forward_var(&mut tape, xv, &wv, &cfg, &[]).unwrap();
    let pv = tape.leaf(probe.clone());
    let m = tape.mul(out, pv).unwrap();
    let l = tape.sum(m);
    tape.backward(l).unwrap();
    let analytic = [xv, wv.temporal, wv.channel, wv.spatial].map(|v| widen(tape.grad(v).unwrap()));

    let eval = |xs: &[DenseTensor]| -> f64 {
        let w = PfaWeights {
            temporal: xs[1].clone(),
            channel: xs[2].clone(),
            spatial: xs[3].clone(),
        };
        probe_dot(&pfa_forward(&xs[0], &w, &cfg).unwrap(), &probe)
    };
    (0..4)
        .map(|i| relative_error(&analytic[i], &numeric_grad(&inputs, i, 1e-2, &eval)))
        .fold(0.0, f64::max)
}

pub fn grad_cp_loss(seed: u64) -> f64 {
    let dims = [4, 3, 5];
    let target = DenseTensor::uniform(&dims, -1.0, 1.0, &mut rng(seed)).unwrap();
    let f = CpFactors::random(dims, 2, 1.0, seed + 1).unwrap();
    let g = cp_gradient(&target, &f).unwrap();
    let inputs = [f.a.clone(), f.b.clone(), f.c.clone()];
    let eval = |xs: &[DenseTensor]| -> f64 {
        cp_loss(
            &target,
            &CpFactors {
                a: xs[0].clone(),
                b: xs[1].clone(),
                c: xs[2].clone(),
            },
        )
        .unwrap()
    };
    [&g.a, &g.b, &g.c]
        .iter()
        .enumerate()
        .map(|(i, ga)| relative_error(&widen(ga), &numeric_grad(&inputs, i, 1e-2, &eval)))
        .fold(0.0, f64::max)
}

pub const GRADIENT_SUITE: [(&str, fn(u64) -> f64); 7] = [
    ("sigmoid", grad_sigmoid),
    ("conv2d", grad_conv2d),
    ("matmul", grad_matmul),
    ("lif_surrogate", grad_lif),
    ("amc_compose", grad_amc_compose),
    ("pfa_forward", grad_pfa_forward),
    ("cp_loss", grad_cp_loss),
];

/// Scalar-loop PFA forward in `f64`, written against the definitions rather
/// than the library's tensor ops. Returns `(T, C, H, W)` values row-major.
pub fn oracle_pfa_forward(x: &DenseTensor, w: &PfaWeights, cfg: &PfaConfig) -> Vec<f64> {
    let (r, t, c, h, wd, k) = (cfg.rank, cfg.time_steps, cfg.channels, cfg.height, cfg.width, cfg.kernel);
    let xv = |ti: usize, ci: usize, i: usize, j: usize| x.data()[((ti * c + ci) * h + i) * wd + j] as f64;
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let hw = (h * wd) as f64;

    let mut y_tc = vec![vec![0.0; c]; t];
    let mut y_s = vec![vec![vec![0.0; wd]; h]; t];
    for ti in 0..t {
        for ci in 0..c {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..wd {
                    s += xv(ti, ci, i, j);
                    y_s[ti][i][j] += xv(ti, ci, i, j) / c as f64;
                }
            }
            y_tc[ti][ci] = s / hw;
        }
    }

    let mut u_t = vec![vec![0.0; t]; r];
    let mut u_c = vec![vec![0.0; c]; r];
    for ri in 0..r {
        for ti in 0..t {
            let z: f64 = (0..c).map(|ci| w.temporal.get(&[ri, ci]) as f64 * y_tc[ti][ci]).sum();
            u_t[ri][ti] = sig(z);
        }
        for ci in 0..c {
            let z: f64 = (0..t).map(|ti| w.channel.get(&[ri, ti]) as f64 * y_tc[ti][ci]).sum();
            u_c[ri][ci] = sig(z);
        }
    }

    let pad = (k as isize - 1) / 2;
    let mut u_s = vec![vec![0.0; r]; h * wd];
    for ri in 0..r {
        for i in 0..h {
            for j in 0..wd {
                let mut z = 0.0;
                for ti in 0..t {
                    for a in 0..k {
                        for b in 0..k {
                            let (ii, jj) = (i as isize + a as isize - pad, j as isize + b as isize - pad);
                            if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                z += w.spatial.get(&[ri, ti, a, b]) as f64 * y_s[ti][ii as usize][jj as usize];
                            }
                        }
                    }
                }
                u_s[i * wd + j][ri] = sig(z);
            }
        }
    }

    let mut out = vec![0.0; t * c * h * wd];
    for ti in 0..t {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..wd {
                    let s = i * wd + j;
                    let a: f64 = (0..r).map(|ri| u_s[s][ri] * u_c[ri][ci] * u_t[ri][ti]).sum();
                    out[((ti * c + ci) * h + i) * wd + j] = xv(ti, ci, i, j) * a;
                }
            }
        }
    }
    out
}

/// Random module configuration bounded by `(R, T, C, H, W) <= (8, 8, 16, 16, 16)`.
pub fn random_config<G: Rng>(r: &mut G) -> PfaConfig {
    PfaConfig::new(
        r.gen_range(1..=8),
        r.gen_range(1..=8),
        r.gen_range(1..=16),
        r.gen_range(1..=16),
        r.gen_range(1..=16),
    )
    .with_kernel([1, 3, 5][r.gen_range(0..3)])
}

/// Max-norm relative deviation of the library forward from the oracle.
pub fn oracle_deviation(seed: u64) -> (PfaConfig, f64) {
    let mut r = rng(seed);
    let cfg = random_config(&mut r);
    let x = DenseTensor::uniform(&cfg.input_dims(), 0.0, 1.0, &mut r).unwrap();
    let w = PfaWeights::init(&cfg, &mut r).unwrap();
    let got = pfa_forward(&x, &w, &cfg).unwrap();
    let want = oracle_pfa_forward(&x, &w, &cfg);
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let dev = got.data().iter().zip(&want).fold(0.0f64, |m, (&g, &o)| m.max((g as f64 - o).abs()));
    (cfg, dev / scale)
}

/// Number of singular values above `tol * largest` for each mode unfolding of
/// an order-3 tensor.
pub fn unfolding_ranks(a: &DenseTensor, tol: f64) -> [usize; 3] {
    let d = [a.dims()[0], a.dims()[1], a.dims()[2]];
    let mut out = [0; 3];
    for (mode, slot) in out.iter_mut().enumerate() {
        let rows = d[mode];
        let cols = a.len() / rows;
        let m = DMatrix::<f64>::from_fn(rows, cols, |row, col| {
            let (p, q) = ((mode + 1) % 3, (mode + 2) % 3);
            let (ip, iq) = (col / d[q], col % d[q]);
            let mut idx = [0; 3];
            idx[mode] = row;
            idx[p] = ip;
            idx[q] = iq;
            a.get(&idx) as f64
        });
        let sv = m.singular_values();
        let top = sv.iter().cloned().fold(0.0, f64::max);
        *slot = sv.iter().filter(|&&s| s > tol * top).count();
    }
    out
}

/// Random sigmoid-range projections of rank `rank` on a small random grid.
pub fn random_projections(seed: u64, rank: usize) -> (PfaConfig, ProjectionSet) {
    let mut r = rng(seed);
    let cfg = PfaConfig::new(rank, r.gen_range(rank.max(2)..=12), r.gen_range(rank.max(2)..=12), r.gen_range(2..=5), r.gen_range(2..=5));
    let p = ProjectionSet {
        temporal: DenseTensor::uniform(&[rank, cfg.time_steps], 0.0, 1.0, &mut r).unwrap(),
        channel: DenseTensor::uniform(&[rank, cfg.channels], 0.0, 1.0, &mut r).unwrap(),
        spatial: DenseTensor::uniform(&[cfg.spatial(), rank], 0.0, 1.0, &mut r).unwrap(),
    };
    (cfg, p)
}
