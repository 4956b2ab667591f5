//! Rank probe for order-3 tensors: fit CP factors by full-batch gradient
//! descent on `L = 1/2 * sum (x_ijk - sum_r a_ir b_jr c_kr)^2` for a sweep of
//! ranks, and report where the residual stops improving.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{DenseTensor, Result, TensorError};

/// Step size used by the original toy experiment, in absolute units.
pub const DEFAULT_ABSOLUTE_STEP: f64 = 1e-4;
/// Step size for unit-norm targets (see [`StepSize::NormScaled`]).
pub const DEFAULT_NORM_STEP: f64 = 0.5;
pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_RESTARTS: usize = 3;
/// Half-width of the uniform initialisation interval.
pub const INIT_SCALE: f32 = 0.1;
/// Knee tolerance on relative error above the best probed rank.
pub const KNEE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    /// `(I, R)`
    pub a: DenseTensor,
    /// `(J, R)`
    pub b: DenseTensor,
    /// `(K, R)`
    pub c: DenseTensor,
}

impl CpFactors {
    pub fn rank(&self) -> usize {
        self.a.dims()[1]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.a.dims()[0], self.b.dims()[0], self.c.dims()[0]]
    }

    fn check(&self) -> Result<()> {
        let ok = [&self.a, &self.b, &self.c].iter().all(|t| t.rank() == 2)
            && self.a.dims()[1] == self.b.dims()[1]
            && self.b.dims()[1] == self.c.dims()[1];
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "cp_factors",
                left: self.a.dims().to_vec(),
                right: self.b.dims().to_vec(),
            });
        }
        Ok(())
    }

    /// Uniform in `[-scale, scale)`.
    pub fn random(dims: [usize; 3], rank: usize, scale: f32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(CpFactors {
            a: DenseTensor::uniform(&[dims[0], rank], -scale, scale, &mut rng)?,
            b: DenseTensor::uniform(&[dims[1], rank], -scale, scale, &mut rng)?,
            c: DenseTensor::uniform(&[dims[2], rank], -scale, scale, &mut rng)?,
        })
    }

    fn scaled(&self, factor: f32) -> Self {
        CpFactors {
            a: self.a.scale(factor),
            b: self.b.scale(factor),
            c: self.c.scale(factor),
        }
    }
}

/// `X[i, j, k] = sum_r A[i, r] * B[j, r] * C[k, r]`.
pub fn cp_reconstruct(f: &CpFactors) -> Result<DenseTensor> {
    f.check()?;
    let [ni, nj, nk] = f.dims();
    let r = f.rank();
    let (a, b, c) = (f.a.data(), f.b.data(), f.c.data());
    let mut out = vec![0.0f32; ni * nj * nk];
    for i in 0..ni {
        for j in 0..nj {
            let row = &mut out[(i * nj + j) * nk..(i * nj + j + 1) * nk];
            for (k, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for q in 0..r {
                    acc += a[i * r + q] * b[j * r + q] * c[k * r + q];
                }
                *o = acc;
            }
        }
    }
    DenseTensor::new(&[ni, nj, nk], out)
}

fn check_target(target: &DenseTensor, f: &CpFactors) -> Result<()> {
    f.check()?;
    if target.dims() != f.dims() {
        return Err(TensorError::ShapeMismatch {
            op: "cp_loss",
            left: target.dims().to_vec(),
            right: f.dims().to_vec(),
        });
    }
    Ok(())
}

/// Half the squared residual over every entry, accumulated in `f64`.
pub fn cp_loss(target: &DenseTensor, f: &CpFactors) -> Result<f64> {
    check_target(target, f)?;
    let recon = cp_reconstruct(f)?;
    Ok(0.5
        * target
            .data()
            .iter()
            .zip(recon.data())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>())
}

/// `||target - reconstruction||_2`.
pub fn residual_norm(target: &DenseTensor, f: &CpFactors) -> Result<f64> {
    Ok((2.0 * cp_loss(target, f)?).sqrt())
}

/// Full gradient of [`cp_loss`] with respect to all three factor matrices,
/// summing over every index pair that shares the differentiated index.
pub fn cp_gradient(target: &DenseTensor, f: &CpFactors) -> Result<CpFactors> {
    check_target(target, f)?;
    let [ni, nj, nk] = f.dims();
    let r = f.rank();
    let recon = cp_reconstruct(f)?;
    let (a, b, c) = (f.a.data(), f.b.data(), f.c.data());
    let (x, y) = (target.data(), recon.data());
    let mut ga = vec![0.0f32; a.len()];
    let mut gb = vec![0.0f32; b.len()];
    let mut gc = vec![0.0f32; c.len()];
    let mut resid = vec![0.0f32; nk];
    for i in 0..ni {
        for j in 0..nj {
            let base = (i * nj + j) * nk;
            for k in 0..nk {
                resid[k] = y[base + k] - x[base + k];
            }
            for q in 0..r {
                let (ai, bj) = (a[i * r + q], b[j * r + q]);
                let mut s = 0.0f32;
                for k in 0..nk {
                    s += resid[k] * c[k * r + q];
                }
                ga[i * r + q] += s * bj;
                gb[j * r + q] += s * ai;
                let ab = ai * bj;
                for k in 0..nk {
                    gc[k * r + q] += resid[k] * ab;
                }
            }
        }
    }
    Ok(CpFactors {
        a: DenseTensor::new(f.a.dims(), ga)?,
        b: DenseTensor::new(f.b.dims(), gb)?,
        c: DenseTensor::new(f.c.dims(), gc)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Plain step `mu` on the target as given.
    Absolute(f64),
    /// Step `mu` on the target rescaled to unit Frobenius norm; factors and
    /// errors are mapped back to the original scale afterwards.
    NormScaled(f64),
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::NormScaled(DEFAULT_NORM_STEP)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpFit {
    pub factors: CpFactors,
    /// `||target - reconstruction||_2` in the target's own scale.
    pub error: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum CpError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gradient descent diverged at iteration {iteration} (rank {rank})")]
    Diverged { rank: usize, iteration: usize },
}

fn descend(target: &DenseTensor, init: CpFactors, mu: f32, iters: usize) -> std::result::Result<CpFactors, CpError> {
    let rank = init.rank();
    let mut f = init;
    for it in 0..iters {
        let g = cp_gradient(target, &f)?;
        for (p, gp) in [(&mut f.a, &g.a), (&mut f.b, &g.b), (&mut f.c, &g.c)] {
            for (v, &d) in p.data_mut().iter_mut().zip(gp.data()) {
                *v -= mu * d;
            }
        }
        if ![&f.a, &f.b, &f.c].iter().all(|t| t.all_finite()) {
            return Err(CpError::Diverged { rank, iteration: it + 1 });
        }
    }
    Ok(f)
}

/// Gradient-descent CP fit from a seeded uniform initialisation in
/// `[-INIT_SCALE, INIT_SCALE)`, all three factors updated simultaneously.
pub fn cp_gd_fit(
    target: &DenseTensor,
    rank: usize,
    step: StepSize,
    iters: usize,
    seed: u64,
) -> std::result::Result<CpFit, CpError> {
    if target.rank() != 3 {
        return Err(TensorError::InvalidShape(format!(
            "cp_gd_fit expects an order-3 tensor, got {:?}",
            target.dims()
        ))
        .into());
    }
    if rank == 0 {
        return Err(TensorError::InvalidArgument("rank must be >= 1".into()).into());
    }
    let (mu, norm) = match step {
        StepSize::Absolute(mu) => (mu, 1.0),
        StepSize::NormScaled(mu) => (mu, target.norm()),
    };
    if !(mu >= 0.0) {
        return Err(TensorError::InvalidArgument(format!("step size {mu} must be >= 0")).into());
    }
    let dims = [target.dims()[0], target.dims()[1], target.dims()[2]];
    let init = CpFactors::random(dims, rank, INIT_SCALE, seed)?;
    let factors = if norm > 0.0 && norm != 1.0 {
        let unit = target.scale((1.0 / norm) as f32);
        descend(&unit, init, mu as f32, iters)?.scaled(norm.cbrt() as f32)
    } else {
        descend(target, init, mu as f32, iters)?
    };
    let error = residual_norm(target, &factors)?;
    if !error.is_finite() {
        return Err(CpError::Diverged { rank, iteration: iters });
    }
    Ok(CpFit {
        factors,
        error,
        iterations: iters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub step: StepSize,
    pub iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            step: StepSize::default(),
            iters: DEFAULT_ITERATIONS,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub rank: usize,
    /// Best residual norm over restarts.
    pub error: f64,
    /// `error / ||target||`.
    pub relative_error: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankProbeReport {
    pub entries: Vec<RankEntry>,
    pub knee_estimate: Option<usize>,
}

/// Seed for one (rank, restart) fit; distinct for every pair.
pub fn fit_seed(seed: u64, rank: usize, restart: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((rank as u64) << 20)
        .wrapping_add(restart as u64)
}

/// Smallest rank whose relative error is within [`KNEE_TOLERANCE`] of the best.
pub fn knee(entries: &[RankEntry]) -> Option<usize> {
    let best = entries
        .iter()
        .map(|e| e.relative_error)
        .fold(f64::INFINITY, f64::min);
    entries
        .iter()
        .find(|e| e.relative_error <= best + KNEE_TOLERANCE)
        .map(|e| e.rank)
}

/// One fit per rank and restart, keeping the lowest error for each rank.
pub fn rank_probe(
    target: &DenseTensor,
    ranks: &[usize],
    opts: &ProbeOptions,
) -> std::result::Result<RankProbeReport, CpError> {
    if ranks.is_empty() {
        return Err(TensorError::InvalidArgument("rank list is empty".into()).into());
    }
    if ranks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TensorError::InvalidArgument(format!(
            "ranks {ranks:?} must be strictly increasing"
        ))
        .into());
    }
    let norm = target.norm();
    let mut entries = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let mut best: Option<CpFit> = None;
        for restart in 0..opts.restarts.max(1) {
            let fit = cp_gd_fit(target, rank, opts.step, opts.iters, fit_seed(opts.seed, rank, restart))?;
            if best.as_ref().map_or(true, |b| fit.error < b.error) {
                best = Some(fit);
            }
        }
        let best = best.expect("at least one restart");
        entries.push(RankEntry {
            rank,
            error: best.error,
            relative_error: if norm > 0.0 { best.error / norm } else { best.error },
            iterations: best.iterations,
        });
    }
    let knee_estimate = knee(&entries);
    Ok(RankProbeReport {
        entries,
        knee_estimate,
    })
}

/// Sum of `terms` random rank-one tensors with standard-normal-like factors
/// (uniform on `[-sqrt 3, sqrt 3)`, unit variance).
pub fn synthetic_low_rank(dims: [usize; 3], terms: usize, seed: u64) -> Result<DenseTensor> {
    let s = 3f32.sqrt();
    let f = CpFactors::random(dims, terms, s, seed)?;
    cp_reconstruct(&f)
}
