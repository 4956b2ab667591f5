//! Mini-batch Adam training on the TET loss, and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::data::{gen_moving_bars, Dataset, CLASSES};
use super::model::Network;
use super::{HarnessError, Result};
use crate::snn::{tet_loss_var, TetParams};
use crate::tensor::{DenseTensor, Tape};

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f32, shapes: &[usize]) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut DenseTensor], grads: &[&DenseTensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean TET loss over the epoch's samples, each taken before its batch update.
    pub train_loss: f64,
    /// Accuracy of the end-of-epoch weights on the whole training set.
    pub train_acc: f64,
    /// `None` when there is no validation data.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
}

pub const METRICS_HEADER: [&str; 4] = ["epoch", "train_loss", "train_acc", "val_acc"];

impl EpochMetrics {
    pub fn csv_record(&self) -> [String; 4] {
        [
            self.epoch.to_string(),
            format!("{:.6}", self.train_loss),
            format!("{:.6}", self.train_acc),
            self.val_acc.map(|a| format!("{a:.6}")).unwrap_or_default(),
        ]
    }
}

/// Trains a freshly built network. `on_epoch` sees each row as it is logged.
/// Batches are drawn in a seeded shuffle order, so equal configs give equal runs.
pub fn train(
    network: Network,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut network = network;
    let cfg = network.config.clone();
    let tet = TetParams {
        lambda: cfg.lambda,
        ..TetParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let sizes: Vec<usize> = network.params.iter().map(|p| p.value.len()).collect();
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let vars = network.record(&mut tape);
            let mut total = None;
            for &i in idx {
                let x = tape.leaf(train_set.samples[i].clone());
                let f = network.forward(&mut tape, &vars, x)?;
                let l = tet_loss_var(&mut tape, f.logits, train_set.labels[i], &tet)?;
                total = Some(match total {
                    None => l,
                    Some(acc) => tape.add(acc, l)?,
                });
            }
            let total = total.expect("non-empty batch");
            let batch_loss = tape.value(total).data()[0] as f64;
            if !batch_loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss {
                    epoch,
                    batch: batch + 1,
                });
            }
            loss_sum += batch_loss;
            let mean = tape.scale(total, 1.0 / idx.len() as f32);
            tape.backward(mean)?;
            let zeros: Vec<DenseTensor> = network.params.iter().map(|p| DenseTensor::zeros_like(&p.value)).collect();
            let grads: Vec<&DenseTensor> = vars
                .iter()
                .zip(&zeros)
                .map(|(&v, z)| tape.grad(v).unwrap_or(z))
                .collect();
            let mut params: Vec<&mut DenseTensor> = network.params.iter_mut().map(|p| &mut p.value).collect();
            adam.update(&mut params, &grads);
        }
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: evaluate(&network, train_set)?.accuracy(),
            val_acc: if val_set.is_empty() {
                None
            } else {
                Some(evaluate(&network, val_set)?.accuracy())
            },
        };
        on_epoch(&m);
        metrics.push(m);
        if let (Some(target), Some(acc)) = (cfg.target_val_acc, m.val_acc) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome { network, metrics })
}

/// Generates the moving-bar set described by `cfg` and splits it, both
/// seeded by `cfg.seed`.
pub fn synthetic_split(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let data = gen_moving_bars(&cfg.synthetic_spec(), cfg.seed)?;
    Ok(data.split(cfg.val_fraction, cfg.seed))
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Argmax over classes of the time-averaged logits; ties go to the lower class.
pub fn predict(logits: &DenseTensor) -> usize {
    let k = logits.dims()[1];
    let mut mean = vec![0.0f64; k];
    for row in logits.data().chunks(k) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    let mut best = 0;
    for c in 1..k {
        if mean[c] > mean[best] {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|c| self.confusion[c][c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

pub fn evaluate(network: &Network, data: &Dataset) -> Result<EvalReport> {
    let mut confusion = vec![vec![0usize; CLASSES]; CLASSES];
    for (x, &y) in data.samples.iter().zip(&data.labels) {
        if y >= CLASSES {
            return Err(HarnessError::Format(format!("label {y} out of range")));
        }
        confusion[y][predict(&network.logits(x)?)] += 1;
    }
    Ok(EvalReport { confusion })
}
