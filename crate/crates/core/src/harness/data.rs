//! Synthetic moving-bar event streams.
//!
//! Each sample is a binary `(T, 2, H, W)` tensor: a bar two pixels wide sweeps
//! one pixel per step (wrapping at the border) in one of four directions.
//! Channel 0 holds ON events on the pixels the bar just entered (its leading
//! edge), channel 1 OFF events on the pixels it just vacated (its trailing
//! edge). Independent salt noise is added to both channels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_err, tensor_file, HarnessError, Result};
use crate::tensor::DenseTensor;

pub const CLASSES: usize = 4;
pub const POLARITIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub time_steps: usize,
    pub height: usize,
    pub width: usize,
    pub noise_rate: f64,
    pub samples_per_class: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.height < 8 || self.width < 8 {
            return bad(format!("H and W must be >= 8, got {}x{}", self.height, self.width));
        }
        if self.time_steps < 2 {
            return bad(format!("T must be >= 2, got {}", self.time_steps));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return bad(format!("noise_rate must lie in [0, 0.5), got {}", self.noise_rate));
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        Ok(())
    }

    pub fn sample_dims(&self) -> [usize; 4] {
        [self.time_steps, POLARITIES, self.height, self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Right,
    Left,
    Down,
    Up,
}

impl Direction {
    pub const ALL: [Direction; CLASSES] = [Direction::Right, Direction::Left, Direction::Down, Direction::Up];

    pub fn label(self) -> usize {
        self as usize
    }

    fn horizontal(self) -> bool {
        matches!(self, Direction::Right | Direction::Left)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MovingBar {
    pub direction: Direction,
    /// Row or column of the bar's low edge at `t = 0`.
    pub start: usize,
}

impl MovingBar {
    /// Low-edge index at step `t`; the bar covers `pos` and `pos + 1` (mod extent).
    pub fn position(&self, t: usize, extent: usize) -> usize {
        match self.direction {
            Direction::Right | Direction::Down => (self.start + t) % extent,
            Direction::Left | Direction::Up => (self.start + extent - t % extent) % extent,
        }
    }

    /// `(on, off)` lines at step `t`: the line entered and the line vacated.
    pub fn edges(&self, t: usize, extent: usize) -> (usize, usize) {
        let p = self.position(t, extent);
        match self.direction {
            Direction::Right | Direction::Down => ((p + 1) % extent, (p + extent - 1) % extent),
            Direction::Left | Direction::Up => (p, (p + 2) % extent),
        }
    }
}

/// Renders one sample. `rng` drives only the salt noise.
pub fn render<G: Rng + ?Sized>(spec: &SyntheticSpec, bar: MovingBar, rng: &mut G) -> Result<DenseTensor> {
    let (h, w) = (spec.height, spec.width);
    let mut x = DenseTensor::zeros(&spec.sample_dims())?;
    let extent = if bar.direction.horizontal() { w } else { h };
    for t in 0..spec.time_steps {
        let (on, off) = bar.edges(t, extent);
        for (ch, line) in [(0, on), (1, off)] {
            for k in 0..if bar.direction.horizontal() { h } else { w } {
                let (i, j) = if bar.direction.horizontal() { (k, line) } else { (line, k) };
                x.set(&[t, ch, i, j], 1.0);
            }
        }
    }
    if spec.noise_rate > 0.0 {
        for v in x.data_mut() {
            if rng.gen_bool(spec.noise_rate) {
                *v = 1.0;
            }
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DenseTensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_dims(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.dims())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Seeded shuffle, then the last `round(n * val_fraction)` samples become
    /// the validation set.
    pub fn split(&self, val_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (self.len() as f64 * val_fraction).round() as usize;
        let (train, val) = order.split_at(self.len() - n_val);
        (self.subset(train), self.subset(val))
    }

    /// Writes `samples.pfat` (stacked `(N, T, 2, H, W)`) and `labels.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let dims = self.sample_dims().ok_or(HarnessError::EmptyDataset)?;
        let mut stacked_dims = vec![self.len()];
        stacked_dims.extend_from_slice(dims);
        let mut data = Vec::with_capacity(self.len() * self.samples[0].len());
        for s in &self.samples {
            data.extend_from_slice(s.data());
        }
        tensor_file::save(dir.join("samples.pfat"), &DenseTensor::new(&stacked_dims, data)?)?;
        let mut csv = String::from("index,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l}");
        }
        let path = dir.join("labels.csv");
        fs::write(&path, csv).map_err(io_err(path))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let stacked = tensor_file::load(dir.join("samples.pfat"))?;
        if stacked.rank() != 5 {
            return Err(HarnessError::Format(format!(
                "samples.pfat must be (N, T, 2, H, W), got {:?}",
                stacked.dims()
            )));
        }
        let n = stacked.dims()[0];
        let per: usize = stacked.dims()[1..].iter().product();
        let samples = stacked
            .data()
            .chunks_exact(per.max(1))
            .take(n)
            .map(|c| DenseTensor::new(&stacked.dims()[1..], c.to_vec()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut reader = csv::Reader::from_path(dir.join("labels.csv"))?;
        let mut labels = Vec::with_capacity(n);
        for row in reader.records() {
            let row = row?;
            let label: usize = row
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| HarnessError::Format(format!("bad label row {:?}", row)))?;
            labels.push(label);
        }
        if labels.len() != n {
            return Err(HarnessError::Format(format!("{} labels for {n} samples", labels.len())));
        }
        Ok(Dataset { samples, labels })
    }
}

/// `samples_per_class` bars per direction with uniform start positions, in a
/// seeded random order.
pub fn gen_moving_bars(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(CLASSES * spec.samples_per_class);
    for direction in Direction::ALL {
        let extent = if direction.horizontal() { spec.width } else { spec.height };
        for _ in 0..spec.samples_per_class {
            let bar = MovingBar {
                direction,
                start: rng.gen_range(0..extent),
            };
            items.push((render(spec, bar, &mut rng)?, direction.label()));
        }
    }
    items.shuffle(&mut rng);
    let (samples, labels) = items.into_iter().unzip();
    Ok(Dataset { samples, labels })
}
