//! The toy spiking networks.
//!
//! `toy-vgg`: conv(2->16, 3) -> LIF -> avgpool2 -> [PFA] -> conv(16->32, 3) ->
//! LIF -> avgpool2 -> [PFA] -> flatten -> linear, giving logits per time step.
//! `mlp`: linear(2HW->64) -> LIF -> linear, for quick smoke runs.
//!
//! Samples are `(T, 2, H, W)`; the convolutions treat `T` as the batch axis.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelKind, Placement, RunConfig};
use super::data::{CLASSES, POLARITIES};
use super::{io_err, tensor_file, HarnessError, Result};
use crate::pfa::{pfa_site_var, Dimension, PfaConfig, PfaVars, PfaWeights, ProjectionVars};
use crate::snn::{lif_sequence_var, LifParams};
use crate::tensor::{DenseTensor, Tape, Var};

const CONV1_OUT: usize = 16;
const CONV2_OUT: usize = 32;
const MLP_HIDDEN: usize = 64;
const KERNEL: usize = 3;

/// Weight bound multiplier over the `1/sqrt(fan_in)` default. Binary,
/// sparse spike inputs need the larger scale for the first layers to fire.
pub const INIT_GAIN: f32 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: DenseTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: RunConfig,
    pub lif: LifParams,
    pub params: Vec<Param>,
}

/// One PFA site recorded during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct SiteCapture {
    pub config: PfaConfig,
    pub projections: ProjectionVars,
    pub attention: Var,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `(T, classes)`.
    pub logits: Var,
    pub sites: Vec<SiteCapture>,
}

enum Init {
    Fan(usize),
    Pfa,
}

impl Network {
    /// `(name, dims, init)` for every parameter, in storage order.
    fn layout(cfg: &RunConfig) -> Vec<(String, Vec<usize>, Init)> {
        let mut out = Vec::new();
        match cfg.model {
            ModelKind::ToyVgg => {
                let (k2, d) = (KERNEL * KERNEL, CONV2_OUT * (cfg.height / 4) * (cfg.width / 4));
                let sites = Self::site_configs(cfg);
                let convs = [
                    ("conv1.weight", [CONV1_OUT, POLARITIES, KERNEL, KERNEL]),
                    ("conv2.weight", [CONV2_OUT, CONV1_OUT, KERNEL, KERNEL]),
                ];
                for (n, (name, dims)) in convs.into_iter().enumerate() {
                    out.push((name.into(), dims.to_vec(), Init::Fan(dims[1] * k2)));
                    if let Some(site) = sites.get(n) {
                        let p = n + 1;
                        out.push((format!("pfa{p}.temporal"), vec![site.rank, site.channels], Init::Pfa));
                        out.push((format!("pfa{p}.channel"), vec![site.rank, site.time_steps], Init::Pfa));
                        out.push((format!("pfa{p}.spatial"), vec![site.rank, site.time_steps, site.kernel, site.kernel], Init::Pfa));
                    }
                }
                out.push(("fc.weight".into(), vec![d, CLASSES], Init::Fan(d)));
                out.push(("fc.bias".into(), vec![1, CLASSES], Init::Fan(d)));
            }
            ModelKind::Mlp => {
                let d = POLARITIES * cfg.height * cfg.width;
                out.push(("fc1.weight".into(), vec![d, MLP_HIDDEN], Init::Fan(d)));
                out.push(("fc1.bias".into(), vec![1, MLP_HIDDEN], Init::Fan(d)));
                out.push(("fc2.weight".into(), vec![MLP_HIDDEN, CLASSES], Init::Fan(MLP_HIDDEN)));
                out.push(("fc2.bias".into(), vec![1, CLASSES], Init::Fan(MLP_HIDDEN)));
            }
        }
        out
    }

    /// Module configurations of the PFA sites, in forward order.
    pub fn site_configs(cfg: &RunConfig) -> Vec<PfaConfig> {
        if cfg.model != ModelKind::ToyVgg || cfg.pfa_placement == Placement::None {
            return Vec::new();
        }
        let (r, t) = (cfg.effective_rank(), cfg.time_steps);
        vec![
            PfaConfig::new(r, t, CONV1_OUT, cfg.height / 2, cfg.width / 2),
            PfaConfig::new(r, t, CONV2_OUT, cfg.height / 4, cfg.width / 4),
        ]
    }

    /// Fresh weights drawn from a stream derived from `cfg.seed`.
    pub fn build(cfg: &RunConfig) -> Result<Network> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let sites = Self::site_configs(cfg);
        let mut params = Vec::new();
        let mut site_weights = Vec::new();
        for (name, dims, init) in Self::layout(cfg) {
            let value = match init {
                Init::Fan(fan_in) => {
                    let b = INIT_GAIN / (fan_in as f32).sqrt();
                    DenseTensor::uniform(&dims, -b, b, &mut rng)?
                }
                Init::Pfa => {
                    if name.ends_with(".temporal") {
                        site_weights.push(PfaWeights::init(&sites[site_weights.len()], &mut rng)?);
                    }
                    let w = site_weights.last().unwrap();
                    match name.rsplit('.').next() {
                        Some("temporal") => w.temporal.clone(),
                        Some("channel") => w.channel.clone(),
                        _ => w.spatial.clone(),
                    }
                }
            };
            params.push(Param { name, value });
        }
        Ok(Network {
            config: cfg.clone(),
            lif: LifParams::default(),
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&DenseTensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn sample_dims(&self) -> [usize; 4] {
        [self.config.time_steps, POLARITIES, self.config.height, self.config.width]
    }

    pub fn record(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Records one sample's forward pass. `vars` come from [`Network::record`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Forward> {
        let dims = tape.value(x).dims().to_vec();
        if dims != self.sample_dims() {
            return Err(HarnessError::Incompatible(format!(
                "sample shape {:?} does not match model input {:?}",
                dims,
                self.sample_dims()
            )));
        }
        let var = |name: &str| -> Var {
            vars[self.params.iter().position(|p| p.name == name).expect("parameter present")]
        };
        let t = self.config.time_steps;
        let ablate: &[Dimension] = &self.config.ablate;
        let mut sites = Vec::new();
        let logits = match self.config.model {
            ModelKind::ToyVgg => {
                let site_cfgs = Self::site_configs(&self.config);
                let mut h = x;
                for (n, conv) in ["conv1.weight", "conv2.weight"].into_iter().enumerate() {
                    let c = tape.conv2d(h, var(conv), (KERNEL - 1) / 2)?;
                    let s = lif_sequence_var(tape, c, &self.lif)?;
                    h = tape.avg_pool2(s)?;
                    if let Some(site) = site_cfgs.get(n) {
                        let w = PfaVars {
                            temporal: var(&format!("pfa{}.temporal", n + 1)),
                            channel: var(&format!("pfa{}.channel", n + 1)),
                            spatial: var(&format!("pfa{}.spatial", n + 1)),
                        };
                        let out = pfa_site_var(tape, h, &w, site, ablate)?;
                        sites.push(SiteCapture {
                            config: *site,
                            projections: out.projections,
                            attention: out.attention,
                        });
                        h = out.output;
                    }
                }
                let d = tape.value(h).len() / t;
                let flat = tape.reshape(h, &[t, d])?;
                let z = tape.matmul(flat, var("fc.weight"))?;
                tape.add(z, var("fc.bias"))?
            }
            ModelKind::Mlp => {
                let flat = tape.reshape(x, &[t, dims[1..].iter().product()])?;
                let z = tape.matmul(flat, var("fc1.weight"))?;
                let z = tape.add(z, var("fc1.bias"))?;
                let s = lif_sequence_var(tape, z, &self.lif)?;
                let z = tape.matmul(s, var("fc2.weight"))?;
                tape.add(z, var("fc2.bias"))?
            }
        };
        Ok(Forward { logits, sites })
    }

    /// Per-step logits `(T, classes)` without keeping the graph.
    pub fn logits(&self, sample: &DenseTensor) -> Result<DenseTensor> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let x = tape.leaf(sample.clone());
        let f = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(f.logits).clone())
    }

    /// Writes `config.ini` and one `<name>.pfat` per parameter.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let ini = dir.join("config.ini");
        fs::write(&ini, self.config.to_ini()).map_err(io_err(ini))?;
        for p in &self.params {
            tensor_file::save(dir.join(format!("{}.pfat", p.name)), &p.value)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Network> {
        let dir = dir.as_ref();
        let ini = dir.join("config.ini");
        let text = fs::read_to_string(&ini).map_err(io_err(ini))?;
        let config = RunConfig::from_ini(&text)?;
        let mut params = Vec::new();
        for (name, dims, _) in Self::layout(&config) {
            let value = tensor_file::load(dir.join(format!("{name}.pfat")))?;
            if value.dims() != dims.as_slice() {
                return Err(HarnessError::Incompatible(format!(
                    "{name}: stored {:?}, model expects {:?}",
                    value.dims(),
                    dims
                )));
            }
            params.push(Param { name, value });
        }
        Ok(Network {
            config,
            lif: LifParams::default(),
            params,
        })
    }
}
