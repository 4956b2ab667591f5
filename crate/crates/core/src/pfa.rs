//! Projected-full attention.
//!
//! An input spike tensor `X` of shape `(T, C, H, W)` is squeezed three ways and
//! linearly projected (the LPST stage) into a temporal matrix `(R, T)`, a
//! channel matrix `(R, C)` and a spatial matrix `(HW, R)`. The attention map is
//! then composed as a sum of `R` rank-one outer products (the AMC stage),
//!
//! ```text
//! A[s, c, t] = sum_r  U_s[s, r] * U_c[r, c] * U_t[r, t]
//! ```
//!
//! and fused into the input by a Hadamard product. `R` is the connecting
//! factor: it bounds the rank of every unfolding of `A`.
//!
//! Index mapping: the attention map is stored `(HW, C, T)` with `s = i * W + j`
//! for spatial position `(i, j)` of the `(T, C, H, W)` input.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::tensor::{
    self, CustomOp, DenseTensor, Result, Tape, TensorError, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PfaConfig {
    /// Connecting factor `R`.
    pub rank: usize,
    /// Odd spatial kernel size `k`.
    pub kernel: usize,
    pub time_steps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl PfaConfig {
    pub fn new(rank: usize, time_steps: usize, channels: usize, height: usize, width: usize) -> Self {
        PfaConfig {
            rank,
            kernel: 3,
            time_steps,
            channels,
            height,
            width,
        }
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [self.time_steps, self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(TensorError::InvalidArgument("connecting factor R must be >= 1".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "kernel size {} must be odd",
                self.kernel
            )));
        }
        if self.input_dims().iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidArgument(format!(
                "extents {:?} must be positive",
                self.input_dims()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &DenseTensor) -> Result<()> {
        self.validate()?;
        if x.dims() != self.input_dims() {
            return Err(TensorError::ShapeMismatch {
                op: "pfa",
                left: x.dims().to_vec(),
                right: self.input_dims().to_vec(),
            });
        }
        Ok(())
    }
}

/// Learnable parameters of one PFA module. All layers are bias-free.
#[derive(Debug, Clone, PartialEq)]
pub struct PfaWeights {
    /// `(R, C)`: maps each length-`C` column of the temporal squeeze to length `R`.
    pub temporal: DenseTensor,
    /// `(R, T)`: maps each length-`T` column of the channel squeeze to length `R`.
    pub channel: DenseTensor,
    /// `(R, T, k, k)`: spatial projection kernel, time steps as input channels.
    pub spatial: DenseTensor,
}

impl PfaWeights {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    pub fn init<G: Rng + ?Sized>(cfg: &PfaConfig, rng: &mut G) -> Result<Self> {
        cfg.validate()?;
        let (r, t, c, k) = (cfg.rank, cfg.time_steps, cfg.channels, cfg.kernel);
        let bound = |fan_in: usize| 1.0 / (fan_in as f32).sqrt();
        Ok(PfaWeights {
            temporal: DenseTensor::uniform(&[r, c], -bound(c), bound(c), rng)?,
            channel: DenseTensor::uniform(&[r, t], -bound(t), bound(t), rng)?,
            spatial: DenseTensor::uniform(&[r, t, k, k], -bound(t * k * k), bound(t * k * k), rng)?,
        })
    }

    pub fn zeros(cfg: &PfaConfig) -> Result<Self> {
        cfg.validate()?;
        let (r, t, c, k) = (cfg.rank, cfg.time_steps, cfg.channels, cfg.kernel);
        Ok(PfaWeights {
            temporal: DenseTensor::zeros(&[r, c])?,
            channel: DenseTensor::zeros(&[r, t])?,
            spatial: DenseTensor::zeros(&[r, t, k, k])?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.temporal.len() + self.channel.len() + self.spatial.len()
    }

    pub fn tensors(&self) -> [&DenseTensor; 3] {
        [&self.temporal, &self.channel, &self.spatial]
    }
}

/// The three LPST outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    /// `(R, T)`
    pub temporal: DenseTensor,
    /// `(R, C)`
    pub channel: DenseTensor,
    /// `(HW, R)`
    pub spatial: DenseTensor,
}

impl ProjectionSet {
    pub fn rank(&self) -> usize {
        self.temporal.dims()[0]
    }

    pub fn ones(cfg: &PfaConfig) -> Result<Self> {
        Ok(ProjectionSet {
            temporal: DenseTensor::ones(&[cfg.rank, cfg.time_steps])?,
            channel: DenseTensor::ones(&[cfg.rank, cfg.channels])?,
            spatial: DenseTensor::ones(&[cfg.spatial(), cfg.rank])?,
        })
    }

    fn check(&self, cfg: &PfaConfig) -> Result<()> {
        let expected: [(&DenseTensor, [usize; 2]); 3] = [
            (&self.temporal, [cfg.rank, cfg.time_steps]),
            (&self.channel, [cfg.rank, cfg.channels]),
            (&self.spatial, [cfg.spatial(), cfg.rank]),
        ];
        for (t, dims) in expected {
            if t.dims() != dims {
                return Err(TensorError::ShapeMismatch {
                    op: "amc_compose",
                    left: t.dims().to_vec(),
                    right: dims.to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Attention tensor of shape `(HW, C, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub values: DenseTensor,
}

impl AttentionMap {
    /// Rearranged to `(T, C, H, W)` so it can multiply the input elementwise.
    pub fn to_input_layout(&self, height: usize, width: usize) -> Result<DenseTensor> {
        let d = self.values.dims();
        tensor::permute(&self.values, &[2, 1, 0])?.reshape(&[d[2], d[1], height, width])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Temporal,
    Channel,
    Spatial,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Temporal, Dimension::Channel, Dimension::Spatial];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Temporal => "temporal",
            Dimension::Channel => "channel",
            Dimension::Spatial => "spatial",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "temporal" => Ok(Dimension::Temporal),
            "channel" => Ok(Dimension::Channel),
            "spatial" => Ok(Dimension::Spatial),
            other => Err(TensorError::InvalidArgument(format!("unknown dimension `{other}`"))),
        }
    }
}

/// Rank-one attention forms expressible as special cases of the composer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Temporal vector only: channel and spatial factors are all ones.
    Temporal,
    /// Temporal and channel vectors; spatial factor all ones.
    TemporalChannel,
    /// All three vectors: identical to PFA with `R = 1`.
    Full,
}

impl FromStr for BaselineMode {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "temporal" => Ok(BaselineMode::Temporal),
            "temporal-channel" => Ok(BaselineMode::TemporalChannel),
            "full" => Ok(BaselineMode::Full),
            other => Err(TensorError::InvalidArgument(format!("unknown baseline mode `{other}`"))),
        }
    }
}

/// Per-stage multiply-accumulate tally filled in while the forward pass runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacTally {
    pub squeeze: u64,
    pub fc: u64,
    pub conv: u64,
    pub compose: u64,
}

impl MacTally {
    pub fn total(&self) -> u64 {
        self.squeeze + self.fc + self.conv + self.compose
    }
}

fn check_rank4(x: &DenseTensor, op: &'static str) -> Result<()> {
    if x.rank() != 4 {
        return Err(TensorError::InvalidShape(format!(
            "{op}: expected (T, C, H, W), got {:?}",
            x.dims()
        )));
    }
    Ok(())
}

/// `Y[c, t] = mean_{i,j} X[t, c, i, j]`, shape `(C, T)`.
pub fn squeeze_temporal(x: &DenseTensor) -> Result<DenseTensor> {
    check_rank4(x, "squeeze_temporal")?;
    tensor::transpose2d(&tensor::mean_over(x, &[2, 3])?)
}

/// `Y[t, c] = mean_{i,j} X[t, c, i, j]`, shape `(T, C)`.
pub fn squeeze_channel(x: &DenseTensor) -> Result<DenseTensor> {
    check_rank4(x, "squeeze_channel")?;
    tensor::mean_over(x, &[2, 3])
}

/// `Y[t, i, j] = mean_c X[t, c, i, j]`, shape `(T, H, W)`.
pub fn squeeze_spatial(x: &DenseTensor) -> Result<DenseTensor> {
    check_rank4(x, "squeeze_spatial")?;
    tensor::mean_over(x, &[1])
}

fn lpst_counted(x: &DenseTensor, w: &PfaWeights, cfg: &PfaConfig, tally: &mut MacTally) -> Result<ProjectionSet> {
    cfg.check_input(x)?;
    let (r, hw) = (cfg.rank, cfg.spatial() as u64);

    let yt = squeeze_temporal(x)?;
    let yc = squeeze_channel(x)?;
    let ys = squeeze_spatial(x)?;
    tally.squeeze += 3 * x.len() as u64;

    let temporal = tensor::sigmoid(&tensor::matmul(&w.temporal, &yt)?);
    let channel = tensor::sigmoid(&tensor::matmul(&w.channel, &yc)?);
    tally.fc += (w.temporal.len() * yt.dims()[1] + w.channel.len() * yc.dims()[1]) as u64;

    let pad = (cfg.kernel - 1) / 2;
    let conv = tensor::conv2d(&ys, &w.spatial, pad)?;
    tally.conv += w.spatial.len() as u64 * hw;
    let spatial = tensor::sigmoid(&tensor::transpose2d(&conv.reshape(&[r, cfg.spatial()])?)?);

    Ok(ProjectionSet {
        temporal,
        channel,
        spatial,
    })
}

/// LPST: squeeze, project, and squash into `(0, 1)`.
pub fn lpst_forward(x: &DenseTensor, w: &PfaWeights, cfg: &PfaConfig) -> Result<ProjectionSet> {
    lpst_counted(x, w, cfg, &mut MacTally::default())
}

/// AMC: sum of `R` outer products of projection columns, `(HW, C, T)`.
pub fn amc_compose(p: &ProjectionSet, cfg: &PfaConfig) -> Result<AttentionMap> {
    p.check(cfg)?;
    Ok(AttentionMap {
        values: compose(&p.spatial, &p.channel, &p.temporal)?,
    })
}

fn compose(us: &DenseTensor, uc: &DenseTensor, ut: &DenseTensor) -> Result<DenseTensor> {
    let (hw, r) = (us.dims()[0], us.dims()[1]);
    let (c, t) = (uc.dims()[1], ut.dims()[1]);
    let (usd, ucd, utd) = (us.data(), uc.data(), ut.data());
    let mut out = vec![0.0f32; hw * c * t];
    for s in 0..hw {
        for ci in 0..c {
            let row = &mut out[(s * c + ci) * t..(s * c + ci + 1) * t];
            for ri in 0..r {
                let sc = usd[s * r + ri] * ucd[ri * c + ci];
                let trow = &utd[ri * t..(ri + 1) * t];
                for (o, &tv) in row.iter_mut().zip(trow) {
                    *o += sc * tv;
                }
            }
        }
    }
    DenseTensor::new(&[hw, c, t], out)
}

/// Hadamard product of the input with the attention map.
pub fn fuse(x: &DenseTensor, attention: &AttentionMap) -> Result<DenseTensor> {
    check_rank4(x, "fuse")?;
    let a = attention.to_input_layout(x.dims()[2], x.dims()[3])?;
    if a.dims() != x.dims() {
        return Err(TensorError::ShapeMismatch {
            op: "fuse",
            left: x.dims().to_vec(),
            right: a.dims().to_vec(),
        });
    }
    tensor::mul(x, &a)
}

/// Full PFA on one sample, optionally with some projections ablated to ones.
/// `tally` receives the multiply-accumulate count of each stage.
pub fn pfa_forward_counted(
    x: &DenseTensor,
    w: &PfaWeights,
    cfg: &PfaConfig,
    ablate: &[Dimension],
    tally: &mut MacTally,
) -> Result<(DenseTensor, AttentionMap)> {
    let p = ablate_dimension(&lpst_counted(x, w, cfg, tally)?, ablate);
    let a = amc_compose(&p, cfg)?;
    // Composition and fusion are one pass per output element: R MACs each.
    tally.compose += (cfg.rank * x.len()) as u64;
    Ok((fuse(x, &a)?, a))
}

/// `X * A` with `A = amc_compose(lpst_forward(X))`. Output shape equals input.
pub fn pfa_forward(x: &DenseTensor, w: &PfaWeights, cfg: &PfaConfig) -> Result<DenseTensor> {
    Ok(pfa_forward_counted(x, w, cfg, &[], &mut MacTally::default())?.0)
}

/// Applies [`pfa_forward`] independently to each sample of `(N, T, C, H, W)`.
pub fn pfa_forward_batch(xs: &DenseTensor, w: &PfaWeights, cfg: &PfaConfig) -> Result<DenseTensor> {
    if xs.rank() != 5 {
        return Err(TensorError::InvalidShape(format!(
            "pfa_forward_batch: expected (N, T, C, H, W), got {:?}",
            xs.dims()
        )));
    }
    let per = xs.len() / xs.dims()[0];
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.data().chunks(per) {
        let x = DenseTensor::new(&xs.dims()[1..], chunk.to_vec())?;
        out.extend_from_slice(pfa_forward(&x, w, cfg)?.data());
    }
    DenseTensor::new(xs.dims(), out)
}

/// Replaces each named factor by an all-ones matrix of the same shape.
pub fn ablate_dimension(p: &ProjectionSet, dims: &[Dimension]) -> ProjectionSet {
    let ones = |t: &DenseTensor| t.map(|_| 1.0);
    let mut out = p.clone();
    for d in dims {
        match d {
            Dimension::Temporal => out.temporal = ones(&p.temporal),
            Dimension::Channel => out.channel = ones(&p.channel),
            Dimension::Spatial => out.spatial = ones(&p.spatial),
        }
    }
    out
}

/// Rank-one attention built from this module's projections with some factors
/// replaced by all-ones vectors. Requires `cfg.rank == 1`.
pub fn baseline_rank1(
    x: &DenseTensor,
    w: &PfaWeights,
    cfg: &PfaConfig,
    mode: BaselineMode,
) -> Result<AttentionMap> {
    if cfg.rank != 1 {
        return Err(TensorError::InvalidArgument(format!(
            "rank-one baselines need R = 1, got {}",
            cfg.rank
        )));
    }
    let p = lpst_forward(x, w, cfg)?;
    let p = match mode {
        BaselineMode::Temporal => ablate_dimension(&p, &[Dimension::Channel, Dimension::Spatial]),
        BaselineMode::TemporalChannel => ablate_dimension(&p, &[Dimension::Spatial]),
        BaselineMode::Full => p,
    };
    amc_compose(&p, cfg)
}

/// Tape handles for one module's weights.
#[derive(Debug, Clone, Copy)]
pub struct PfaVars {
    pub temporal: Var,
    pub channel: Var,
    pub spatial: Var,
}

impl PfaVars {
    pub fn record(tape: &mut Tape, w: &PfaWeights) -> Self {
        PfaVars {
            temporal: tape.leaf(w.temporal.clone()),
            channel: tape.leaf(w.channel.clone()),
            spatial: tape.leaf(w.spatial.clone()),
        }
    }
}

/// Projection handles produced on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub temporal: Var,
    pub channel: Var,
    pub spatial: Var,
}

pub fn lpst_forward_var(
    tape: &mut Tape,
    x: Var,
    w: &PfaVars,
    cfg: &PfaConfig,
    ablate: &[Dimension],
) -> Result<ProjectionVars> {
    cfg.check_input(tape.value(x))?;
    let constant = |tape: &mut Tape, dims: &[usize]| -> Result<Var> {
        Ok(tape.leaf(DenseTensor::ones(dims)?))
    };
    let temporal = if ablate.contains(&Dimension::Temporal) {
        constant(tape, &[cfg.rank, cfg.time_steps])?
    } else {
        let m = tape.mean_over(x, &[2, 3])?;
        let yt = tape.transpose2d(m)?;
        let z = tape.matmul(w.temporal, yt)?;
        tape.sigmoid(z)
    };
    let channel = if ablate.contains(&Dimension::Channel) {
        constant(tape, &[cfg.rank, cfg.channels])?
    } else {
        let yc = tape.mean_over(x, &[2, 3])?;
        let z = tape.matmul(w.channel, yc)?;
        tape.sigmoid(z)
    };
    let spatial = if ablate.contains(&Dimension::Spatial) {
        constant(tape, &[cfg.spatial(), cfg.rank])?
    } else {
        let ys = tape.mean_over(x, &[1])?;
        let ys = tape.reshape(ys, &[1, cfg.time_steps, cfg.height, cfg.width])?;
        let conv = tape.conv2d(ys, w.spatial, (cfg.kernel - 1) / 2)?;
        let flat = tape.reshape(conv, &[cfg.rank, cfg.spatial()])?;
        let z = tape.transpose2d(flat)?;
        tape.sigmoid(z)
    };
    Ok(ProjectionVars {
        temporal,
        channel,
        spatial,
    })
}

struct ComposeBackward;

impl CustomOp for ComposeBackward {
    fn name(&self) -> &'static str {
        "amc_compose"
    }

    fn backward(
        &self,
        inputs: &[&DenseTensor],
        _output: &DenseTensor,
        grad: &DenseTensor,
    ) -> Result<Vec<DenseTensor>> {
        let (us, uc, ut) = (inputs[0], inputs[1], inputs[2]);
        let (hw, r) = (us.dims()[0], us.dims()[1]);
        let (c, t) = (uc.dims()[1], ut.dims()[1]);
        let (usd, ucd, utd, g) = (us.data(), uc.data(), ut.data(), grad.data());
        let mut gs = vec![0.0f32; us.len()];
        let mut gc = vec![0.0f32; uc.len()];
        let mut gt = vec![0.0f32; ut.len()];
        for s in 0..hw {
            for ci in 0..c {
                let grow = &g[(s * c + ci) * t..(s * c + ci + 1) * t];
                for ri in 0..r {
                    let trow = &utd[ri * t..(ri + 1) * t];
                    let dot: f32 = grow.iter().zip(trow).map(|(a, b)| a * b).sum();
                    let a = usd[s * r + ri];
                    let b = ucd[ri * c + ci];
                    gs[s * r + ri] += dot * b;
                    gc[ri * c + ci] += dot * a;
                    let ab = a * b;
                    for (o, &gv) in gt[ri * t..(ri + 1) * t].iter_mut().zip(grow) {
                        *o += ab * gv;
                    }
                }
            }
        }
        Ok(vec![
            DenseTensor::new(us.dims(), gs)?,
            DenseTensor::new(uc.dims(), gc)?,
            DenseTensor::new(ut.dims(), gt)?,
        ])
    }
}

/// Tape version of [`amc_compose`].
pub fn amc_compose_var(tape: &mut Tape, p: &ProjectionVars) -> Result<Var> {
    let value = compose(tape.value(p.spatial), tape.value(p.channel), tape.value(p.temporal))?;
    Ok(tape.custom(&[p.spatial, p.channel, p.temporal], value, Box::new(ComposeBackward)))
}

/// Tape version of [`pfa_forward`]. Returns the fused output and the attention map.
pub fn pfa_forward_var(
    tape: &mut Tape,
    x: Var,
    w: &PfaVars,
    cfg: &PfaConfig,
    ablate: &[Dimension],
) -> Result<(Var, Var)> {
    let site = pfa_site_var(tape, x, w, cfg, ablate)?;
    Ok((site.output, site.attention))
}

/// Every intermediate of one module application worth inspecting.
#[derive(Debug, Clone, Copy)]
pub struct PfaSiteVars {
    pub output: Var,
    pub projections: ProjectionVars,
    pub attention: Var,
}

pub fn pfa_site_var(
    tape: &mut Tape,
    x: Var,
    w: &PfaVars,
    cfg: &PfaConfig,
    ablate: &[Dimension],
) -> Result<PfaSiteVars> {
    let projections = lpst_forward_var(tape, x, w, cfg, ablate)?;
    let attention = amc_compose_var(tape, &projections)?;
    let tc = tape.permute(attention, &[2, 1, 0])?;
    let aligned = tape.reshape(tc, &cfg.input_dims())?;
    Ok(PfaSiteVars {
        output: tape.mul(x, aligned)?,
        projections,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &PfaConfig, seed: u64) -> (DenseTensor, PfaWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DenseTensor::uniform(&cfg.input_dims(), 0.0, 1.0, &mut rng).unwrap();
        let w = PfaWeights::init(cfg, &mut rng).unwrap();
        (x, w)
    }

    #[test]
    fn squeezes_of_ones() {
        let x = DenseTensor::ones(&[3, 4, 2, 5]).unwrap();
        assert_eq!(squeeze_temporal(&x).unwrap(), DenseTensor::ones(&[4, 3]).unwrap());
        assert_eq!(squeeze_channel(&x).unwrap(), DenseTensor::ones(&[3, 4]).unwrap());
        assert_eq!(squeeze_spatial(&x).unwrap(), DenseTensor::ones(&[3, 2, 5]).unwrap());
    }

    #[test]
    fn temporal_squeeze_of_time_ramp() {
        let x = DenseTensor::from_fn(&[4, 3, 2, 2], |ix| ix[0] as f32).unwrap();
        let y = squeeze_temporal(&x).unwrap();
        for c in 0..3 {
            for t in 0..4 {
                assert_eq!(y.get(&[c, t]), t as f32);
            }
        }
    }

    #[test]
    fn channel_squeeze_is_transpose_of_temporal() {
        let cfg = PfaConfig::new(2, 3, 5, 4, 4);
        let (x, _) = setup(&cfg, 1);
        assert_eq!(
            squeeze_channel(&x).unwrap(),
            tensor::transpose2d(&squeeze_temporal(&x).unwrap()).unwrap()
        );
    }

    #[test]
    fn single_channel_spatial_squeeze_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DenseTensor::uniform(&[3, 1, 4, 5], -1.0, 1.0, &mut rng).unwrap();
        assert_eq!(squeeze_spatial(&x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_weights_or_input_give_half() {
        let cfg = PfaConfig::new(3, 4, 5, 6, 6);
        let (x, w) = setup(&cfg, 3);
        let check = |p: ProjectionSet| {
            for t in [&p.temporal, &p.channel, &p.spatial] {
                assert!(t.data().iter().all(|&v| v == 0.5));
            }
        };
        check(lpst_forward(&x, &PfaWeights::zeros(&cfg).unwrap(), &cfg).unwrap());
        check(lpst_forward(&DenseTensor::zeros(&cfg.input_dims()).unwrap(), &w, &cfg).unwrap());
    }

    #[test]
    fn projection_shapes() {
        let cfg = PfaConfig::new(3, 4, 5, 6, 7);
        let (x, w) = setup(&cfg, 4);
        let p = lpst_forward(&x, &w, &cfg).unwrap();
        assert_eq!(p.temporal.dims(), &[3, 4]);
        assert_eq!(p.channel.dims(), &[3, 5]);
        assert_eq!(p.spatial.dims(), &[42, 3]);
        let wrong = DenseTensor::zeros(&[4, 5, 6, 6]).unwrap();
        assert!(lpst_forward(&wrong, &w, &cfg).is_err());
    }

    #[test]
    fn compose_of_ones_is_ones() {
        let cfg = PfaConfig::new(1, 3, 2, 2, 2);
        let a = amc_compose(&ProjectionSet::ones(&cfg).unwrap(), &cfg).unwrap();
        assert_eq!(a.values, DenseTensor::ones(&[4, 2, 3]).unwrap());
    }

    #[test]
    fn compose_of_basis_vectors() {
        let cfg = PfaConfig::new(2, 3, 2, 2, 2);
        let basis = |dims: [usize; 2], hot: [(usize, usize); 2]| {
            DenseTensor::from_fn(&dims, |ix| if hot.contains(&(ix[0], ix[1])) { 1.0 } else { 0.0 }).unwrap()
        };
        let p = ProjectionSet {
            temporal: basis([2, 3], [(0, 0), (1, 2)]),
            channel: basis([2, 2], [(0, 1), (1, 0)]),
            spatial: basis([4, 2], [(3, 0), (1, 1)]),
        };
        let a = amc_compose(&p, &cfg).unwrap();
        assert_eq!(a.values.sum(), 2.0);
        assert_eq!(a.values.get(&[3, 1, 0]), 1.0);
        assert_eq!(a.values.get(&[1, 0, 2]), 1.0);
        let bad = ProjectionSet {
            temporal: DenseTensor::ones(&[2, 4]).unwrap(),
            ..p
        };
        assert!(amc_compose(&bad, &cfg).is_err());
    }

    #[test]
    fn identity_attention_and_zero_input() {
        let cfg = PfaConfig::new(1, 3, 4, 4, 4);
        let (x, w) = setup(&cfg, 5);
        let (out, _) = pfa_forward_counted(&x, &w, &cfg, &Dimension::ALL, &mut MacTally::default()).unwrap();
        assert_eq!(out, x);
        let zero = DenseTensor::zeros(&cfg.input_dims()).unwrap();
        assert_eq!(pfa_forward(&zero, &w, &cfg).unwrap(), zero);
    }

    #[test]
    fn ablation_replaces_only_named_factors() {
        let cfg = PfaConfig::new(2, 3, 4, 4, 4);
        let (x, w) = setup(&cfg, 6);
        let p = lpst_forward(&x, &w, &cfg).unwrap();
        assert_eq!(ablate_dimension(&p, &[]), p);
        let a = ablate_dimension(&p, &[Dimension::Spatial]);
        assert!(a.spatial.data().iter().all(|&v| v == 1.0));
        assert_eq!(a.temporal, p.temporal);
        assert_eq!(a.channel, p.channel);
    }

    #[test]
    fn baselines_are_constant_along_replaced_axes() {
        let cfg = PfaConfig::new(1, 4, 3, 4, 4);
        let (x, w) = setup(&cfg, 7);
        let a = baseline_rank1(&x, &w, &cfg, BaselineMode::Temporal).unwrap().values;
        for t in 0..4 {
            let v = a.get(&[0, 0, t]);
            for s in 0..16 {
                for c in 0..3 {
                    assert_eq!(a.get(&[s, c, t]), v);
                }
            }
        }
        let a = baseline_rank1(&x, &w, &cfg, BaselineMode::TemporalChannel).unwrap().values;
        for c in 0..3 {
            for t in 0..4 {
                let v = a.get(&[0, c, t]);
                assert!((0..16).all(|s| a.get(&[s, c, t]) == v));
            }
        }
        let full = baseline_rank1(&x, &w, &cfg, BaselineMode::Full).unwrap();
        assert_eq!(full, amc_compose(&lpst_forward(&x, &w, &cfg).unwrap(), &cfg).unwrap());
        let cfg2 = PfaConfig::new(2, 4, 3, 4, 4);
        assert!(baseline_rank1(&x, &w, &cfg2, BaselineMode::Full).is_err());
        assert!("sideways".parse::<BaselineMode>().is_err());
    }

    #[test]
    fn tape_forward_matches_tensor_forward() {
        let cfg = PfaConfig::new(3, 4, 5, 6, 6);
        let (x, w) = setup(&cfg, 8);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = PfaVars::record(&mut tape, &w);
        let (out, a) = pfa_forward_var(&mut tape, xv, &wv, &cfg, &[]).unwrap();
        let (expected, attention) =
            pfa_forward_counted(&x, &w, &cfg, &[], &mut MacTally::default()).unwrap();
        assert_eq!(tape.value(out), &expected);
        assert_eq!(tape.value(a), &attention.values);
    }

    #[test]
    fn attention_in_open_range() {
        let cfg = PfaConfig::new(4, 4, 5, 6, 6);
        let (x, w) = setup(&cfg, 9);
        let a = amc_compose(&lpst_forward(&x, &w, &cfg).unwrap(), &cfg).unwrap();
        assert!(a.values.data().iter().all(|&v| v > 0.0 && v < 4.0));
    }

    #[test]
    fn weight_count_matches_formula() {
        for (c, t, r, k) in [(128, 10, 8, 3), (1, 1, 1, 1), (7, 3, 2, 5)] {
            let cfg = PfaConfig::new(r, t, c, 4, 4).with_kernel(k);
            let w = PfaWeights::zeros(&cfg).unwrap();
            assert_eq!(w.param_count(), c * r + t * r + k * k * t * r);
        }
    }
}
