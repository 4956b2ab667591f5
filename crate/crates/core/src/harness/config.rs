//! Run configuration and its `key = value` file format.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::data::SyntheticSpec;
use super::{HarnessError, Result};
use crate::pfa::Dimension;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ToyVgg,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ToyVgg => "toy-vgg",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "toy-vgg" => Ok(ModelKind::ToyVgg),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(format!("unknown model `{other}` (expected toy-vgg or mlp)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    AfterEachPool,
    None,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::AfterEachPool => "after-each-pool",
            Placement::None => "none",
        }
    }
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "after-each-pool" => Ok(Placement::AfterEachPool),
            "none" => Ok(Placement::None),
            other => Err(format!("unknown placement `{other}` (expected after-each-pool or none)")),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `temporal,channel`; the empty string is the empty set.
pub fn parse_ablation(s: &str) -> std::result::Result<Vec<Dimension>, String> {
    let mut dims = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "none") {
        let d: Dimension = part.parse().map_err(|_| format!("unknown dimension `{part}`"))?;
        if !dims.contains(&d) {
            dims.push(d);
        }
    }
    dims.sort_by_key(|d| Dimension::ALL.iter().position(|x| x == d));
    Ok(dims)
}

pub fn ablation_label(dims: &[Dimension]) -> String {
    if dims.is_empty() {
        "none".into()
    } else {
        dims.iter().map(|d| d.name()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Connecting factor; `None` means `T / 2`.
    pub rank: Option<usize>,
    pub lambda: f32,
    pub model: ModelKind,
    pub pfa_placement: Placement,
    pub ablate: Vec<Dimension>,
    pub time_steps: usize,
    pub height: usize,
    pub width: usize,
    pub noise_rate: f64,
    pub samples_per_class: usize,
    pub val_fraction: f64,
    /// Stop once validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 16,
            rank: None,
            lambda: 0.05,
            model: ModelKind::ToyVgg,
            pfa_placement: Placement::AfterEachPool,
            ablate: Vec::new(),
            time_steps: 8,
            height: 16,
            width: 16,
            noise_rate: 0.05,
            samples_per_class: 250,
            val_fraction: 0.1,
            target_val_acc: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "learning_rate",
    "epochs",
    "batch_size",
    "R",
    "lambda",
    "model",
    "pfa_placement",
    "ablate",
    "T",
    "H",
    "W",
    "noise_rate",
    "samples_per_class",
    "val_fraction",
    "target_val_acc",
];

/// Splits `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_ini(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(HarnessError::Config(format!("line {}: empty key", n + 1)));
        }
        if pairs.iter().any(|(p, _)| p == k) {
            return Err(HarnessError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| HarnessError::Config(format!("{key} = {value}: {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "R" => self.rank = Some(parse_value(key, value)?),
            "lambda" => self.lambda = parse_value(key, value)?,
            "model" => self.model = parse_value(key, value)?,
            "pfa_placement" => self.pfa_placement = parse_value(key, value)?,
            "ablate" => self.ablate = parse_ablation(value).map_err(HarnessError::Config)?,
            "T" => self.time_steps = parse_value(key, value)?,
            "H" => self.height = parse_value(key, value)?,
            "W" => self.width = parse_value(key, value)?,
            "noise_rate" => self.noise_rate = parse_value(key, value)?,
            "samples_per_class" => self.samples_per_class = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "target_val_acc" => self.target_val_acc = Some(parse_value(key, value)?),
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by the pairs of a config file.
    pub fn from_ini(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_ini(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key, in a form [`RunConfig::from_ini`] reads back unchanged.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "R = {}", self.effective_rank());
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "model = {}", self.model);
        let _ = writeln!(s, "pfa_placement = {}", self.pfa_placement);
        let _ = writeln!(s, "ablate = {}", ablation_label(&self.ablate).replace('+', ","));
        let _ = writeln!(s, "T = {}", self.time_steps);
        let _ = writeln!(s, "H = {}", self.height);
        let _ = writeln!(s, "W = {}", self.width);
        let _ = writeln!(s, "noise_rate = {}", self.noise_rate);
        let _ = writeln!(s, "samples_per_class = {}", self.samples_per_class);
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        if let Some(t) = self.target_val_acc {
            let _ = writeln!(s, "target_val_acc = {t}");
        }
        s
    }

    pub fn effective_rank(&self) -> usize {
        self.rank.unwrap_or((self.time_steps / 2).max(1))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            time_steps: self.time_steps,
            height: self.height,
            width: self.width,
            noise_rate: self.noise_rate,
            samples_per_class: self.samples_per_class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.effective_rank() == 0 {
            return bad("R must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if let Some(t) = self.target_val_acc {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target_val_acc must lie in [0, 1], got {t}"));
            }
        }
        if self.model == ModelKind::ToyVgg && (self.height % 4 != 0 || self.width % 4 != 0) {
            return bad(format!(
                "toy-vgg needs H and W divisible by 4, got {}x{}",
                self.height, self.width
            ));
        }
        self.synthetic_spec().validate()
    }
}
