//! Closed-form parameter and multiply-accumulate counts for one PFA module,
//! and an audit that checks them against a real module.
//!
//! MAC convention: one multiply-accumulate is one operation; each squeeze costs
//! one MAC per accumulated input element; sigmoid, reshape and permute are free;
//! composing the attention map and fusing it into the input costs `R` MACs per
//! output element.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::pfa::{pfa_forward_counted, MacTally, PfaConfig, PfaWeights};
use crate::tensor::{DenseTensor, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Params,
    Macs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTerm {
    pub quantity: Quantity,
    pub label: &'static str,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    pub breakdown: Vec<CostTerm>,
}

impl CostReport {
    fn push(&mut self, quantity: Quantity, label: &'static str, count: u64) {
        match quantity {
            Quantity::Params => self.params += count,
            Quantity::Macs => self.macs += count,
        }
        self.breakdown.push(CostTerm {
            quantity,
            label,
            count,
        });
    }

    fn merge(mut self, other: CostReport) -> CostReport {
        for t in other.breakdown {
            self.push(t.quantity, t.label, t.count);
        }
        self
    }

    pub fn term(&self, label: &str) -> Option<u64> {
        self.breakdown.iter().find(|t| t.label == label).map(|t| t.count)
    }
}

/// `C*R + T*R + k^2*T*R`.
pub fn pfa_param_count(cfg: &PfaConfig) -> CostReport {
    let (c, t, r, k) = (
        cfg.channels as u64,
        cfg.time_steps as u64,
        cfg.rank as u64,
        cfg.kernel as u64,
    );
    let mut report = CostReport::default();
    report.push(Quantity::Params, "fc_temporal", c * r);
    report.push(Quantity::Params, "fc_channel", t * r);
    report.push(Quantity::Params, "conv_spatial", k * k * t * r);
    report
}

/// `3*H*W*T*C + 2*T*C*R + H*W*k^2*T*R + R*H*W*T*C`.
pub fn pfa_mac_count(cfg: &PfaConfig) -> CostReport {
    let (h, w, t, c, r, k) = (
        cfg.height as u64,
        cfg.width as u64,
        cfg.time_steps as u64,
        cfg.channels as u64,
        cfg.rank as u64,
        cfg.kernel as u64,
    );
    let mut report = CostReport::default();
    report.push(Quantity::Macs, "squeeze", 3 * h * w * t * c);
    report.push(Quantity::Macs, "fc", 2 * t * c * r);
    report.push(Quantity::Macs, "conv_spatial", h * w * k * k * t * r);
    report.push(Quantity::Macs, "compose", r * h * w * t * c);
    report
}

/// Both counts in one report.
pub fn pfa_cost(cfg: &PfaConfig) -> CostReport {
    pfa_param_count(cfg).merge(pfa_mac_count(cfg))
}

/// MACs of a dense same-padded `k x k` convolution applied at every time step.
pub fn standard_conv_macs(cfg: &PfaConfig, c_in: usize, c_out: usize) -> u64 {
    (cfg.height * cfg.width * cfg.kernel * cfg.kernel * cfg.time_steps) as u64
        * c_in as u64
        * c_out as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Audit {
    pub formula: CostReport,
    pub measured: CostReport,
    pub matches: bool,
}

/// Compares a measured report against the closed forms. Mismatch is a result,
/// not an error.
pub fn audit_against(cfg: &PfaConfig, measured: CostReport) -> Audit {
    let formula = pfa_cost(cfg);
    let matches = formula.params == measured.params && formula.macs == measured.macs;
    Audit {
        formula,
        measured,
        matches,
    }
}

/// Counts the scalars of freshly built weights and the MACs of a tallied
/// forward pass on a random input.
pub fn measure(cfg: &PfaConfig, seed: u64) -> Result<CostReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = PfaWeights::init(cfg, &mut rng)?;
    let x = DenseTensor::uniform(&cfg.input_dims(), 0.0, 1.0, &mut rng)?;
    let mut tally = MacTally::default();
    pfa_forward_counted(&x, &weights, cfg, &[], &mut tally)?;

    let mut report = CostReport::default();
    report.push(Quantity::Params, "fc_temporal", weights.temporal.len() as u64);
    report.push(Quantity::Params, "fc_channel", weights.channel.len() as u64);
    report.push(Quantity::Params, "conv_spatial", weights.spatial.len() as u64);
    report.push(Quantity::Macs, "squeeze", tally.squeeze);
    report.push(Quantity::Macs, "fc", tally.fc);
    report.push(Quantity::Macs, "conv_spatial", tally.conv);
    report.push(Quantity::Macs, "compose", tally.compose);
    Ok(report)
}

pub fn audit_counts(cfg: &PfaConfig) -> Result<Audit> {
    Ok(audit_against(cfg, measure(cfg, 0)?))
}
