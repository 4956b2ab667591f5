//! Command-line front end. CSV results go to stdout, progress to stderr.
//!
//! Exit status: 0 on success, 1 on a usage or configuration error, 2 when the
//! work itself fails.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cost::{pfa_cost, Quantity};
use crate::cp::{rank_probe, synthetic_low_rank, ProbeOptions, StepSize, DEFAULT_ITERATIONS, DEFAULT_NORM_STEP, DEFAULT_RESTARTS};
use crate::harness::config::{ablation_label, parse_ablation, ModelKind, Placement, RunConfig};
use crate::harness::data::{gen_moving_bars, Dataset, CLASSES};
use crate::harness::export::export_attention;
use crate::harness::model::Network;
use crate::harness::train::{evaluate, mean_and_stderr, synthetic_split, train, METRICS_HEADER};
use crate::harness::{io_err, tensor_file, HarnessError};
use crate::pfa::{Dimension, PfaConfig};

pub const SEED_ENV: &str = "PFA_SEED";

#[derive(Debug, Parser)]
#[command(name = "pfa", version, about = "Projected-full attention for spiking networks")]
struct Cli {
    /// `key = value` run configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// RNG seed; falls back to the config file, then $PFA_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a moving-bar dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Train a network and write a checkpoint.
    Train {
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory from `gen-data`; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        synth: DataFlags,
    },
    /// Accuracy and confusion counts of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the checkpoint's own validation split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// CP rank sweep over a 3-way tensor.
    ProbeRank {
        /// Rank-3 TensorFile to analyse.
        #[arg(long, conflicts_with = "synthetic_rank")]
        input: Option<PathBuf>,
        /// Analyse a random sum of this many rank-one terms instead.
        #[arg(long)]
        synthetic_rank: Option<usize>,
        /// Shape of the synthetic tensor.
        #[arg(long, default_value = "12x10x8")]
        dims: String,
        /// `lo:hi` (inclusive) or a comma list.
        #[arg(long, default_value = "1:6")]
        ranks: String,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iters: usize,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        /// Step size on the unit-norm-rescaled target.
        #[arg(long, default_value_t = DEFAULT_NORM_STEP)]
        mu: f64,
        /// Use `mu` as a plain step on the unscaled target.
        #[arg(long)]
        absolute_step: bool,
    },
    /// Closed-form parameter and MAC counts of one module.
    Cost {
        #[arg(long = "C")]
        channels: usize,
        #[arg(long = "T")]
        time_steps: usize,
        #[arg(long = "R")]
        rank: usize,
        #[arg(long = "k", default_value_t = 3)]
        kernel: usize,
        #[arg(long = "H", default_value_t = 32)]
        height: usize,
        #[arg(long = "W", default_value_t = 32)]
        width: usize,
    },
    /// Train the baseline, full PFA and each single-dimension ablation.
    Ablate {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        synth: DataFlags,
    },
    /// Write projections and attention maps of every PFA site for one sample.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `(T, 2, H, W)` TensorFile; otherwise a generated sample is used.
        #[arg(long)]
        sample: Option<PathBuf>,
        /// Index into the generated validation split.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

#[derive(Debug, Args)]
struct RunFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long = "R")]
    rank: Option<usize>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    placement: Option<Placement>,
    /// Comma list of dimensions replaced by ones.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    target_val_acc: Option<f64>,
}

#[derive(Debug, Args)]
struct DataFlags {
    #[arg(long = "T")]
    time_steps: Option<usize>,
    #[arg(long = "H")]
    height: Option<usize>,
    #[arg(long = "W")]
    width: Option<usize>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command. Returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = dispatch(cli, env_seed.as_deref(), stdout, stderr);
    let _ = stdout.flush();
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            2
        }
    }
}

fn csv_writer(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// Config file, then flag overrides, then the seed fallback chain.
fn resolve_config(cli_config: Option<&Path>, cli_seed: Option<u64>, env_seed: Option<&str>) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    let mut seed_from_file = false;
    if let Some(path) = cli_config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?;
        for (k, v) in crate::harness::config::parse_ini(&text)? {
            seed_from_file |= k == "seed";
            cfg.set(&k, &v)?;
        }
    }
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
    } else if !seed_from_file {
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("{SEED_ENV}={s} is not an unsigned integer")))?;
        }
    }
    Ok(cfg)
}

fn apply_run(cfg: &mut RunConfig, f: &RunFlags) -> std::result::Result<(), Failure> {
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = f.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = f.rank {
        cfg.rank = Some(v);
    }
    if let Some(v) = f.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = f.model {
        cfg.model = v;
    }
    if let Some(v) = f.placement {
        cfg.pfa_placement = v;
    }
    if let Some(v) = &f.ablate {
        cfg.ablate = parse_ablation(v).map_err(|e| Failure::Usage(format!("--ablate: {e}")))?;
    }
    if let Some(v) = f.target_val_acc {
        cfg.target_val_acc = Some(v);
    }
    Ok(())
}

fn apply_data(cfg: &mut RunConfig, f: &DataFlags) {
    if let Some(v) = f.time_steps {
        cfg.time_steps = v;
    }
    if let Some(v) = f.height {
        cfg.height = v;
    }
    if let Some(v) = f.width {
        cfg.width = v;
    }
    if let Some(v) = f.noise_rate {
        cfg.noise_rate = v;
    }
    if let Some(v) = f.samples_per_class {
        cfg.samples_per_class = v;
    }
    if let Some(v) = f.val_fraction {
        cfg.val_fraction = v;
    }
}

fn dispatch(cli: Cli, env_seed: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let mut cfg = resolve_config(cli.config.as_deref(), cli.seed, env_seed)?;
    match cli.command {
        Command::GenData { out, data } => {
            apply_data(&mut cfg, &data);
            cfg.validate()?;
            let ds = gen_moving_bars(&cfg.synthetic_spec(), cfg.seed)?;
            ds.save(&out)?;
            let _ = writeln!(stderr, "wrote {} samples to {}", ds.len(), out.display());
            let mut w = csv_writer(stdout);
            w.write_record(["class", "count"])?;
            for c in 0..CLASSES {
                let n = ds.labels.iter().filter(|&&l| l == c).count();
                w.write_record([c.to_string(), n.to_string()])?;
            }
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        Command::Train { out, data, run, synth } => {
            apply_run(&mut cfg, &run)?;
            apply_data(&mut cfg, &synth);
            let (train_set, val_set) = match &data {
                Some(dir) => {
                    let ds = Dataset::load(dir)?;
                    adopt_dataset_shape(&mut cfg, &ds)?;
                    ds.split(cfg.val_fraction, cfg.seed)
                }
                None => {
                    cfg.validate()?;
                    synthetic_split(&cfg)?
                }
            };
            cfg.validate()?;
            let network = Network::build(&cfg)?;
            let _ = writeln!(
                stderr,
                "{} model, {} parameters, {} train / {} val samples",
                cfg.model,
                network.param_count(),
                train_set.len(),
                val_set.len()
            );
            let mut w = csv_writer(stdout);
            w.write_record(METRICS_HEADER)?;
            let mut log_err = None;
            let outcome = train(network, &train_set, &val_set, |m| {
                let _ = writeln!(
                    stderr,
                    "epoch {}: loss {:.4}, train acc {:.3}, val acc {}",
                    m.epoch,
                    m.train_loss,
                    m.train_acc,
                    m.val_acc.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into())
                );
                if let Err(e) = w.write_record(m.csv_record()).and_then(|_| Ok(w.flush()?)) {
                    log_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = log_err {
                return Err(e.into());
            }
            outcome.network.save(&out)?;
            let mut log = csv_writer_file(&out.join("metrics.csv"))?;
            log.write_record(METRICS_HEADER)?;
            for m in &outcome.metrics {
                log.write_record(m.csv_record())?;
            }
            log.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
            let _ = writeln!(stderr, "checkpoint written to {}", out.display());
        }
        Command::Eval { checkpoint, data } => {
            let network = Network::load(&checkpoint)?;
            let ds = match &data {
                Some(dir) => Dataset::load(dir)?,
                None => synthetic_split(&network.config)?.1,
            };
            let report = evaluate(&network, &ds)?;
            let _ = writeln!(stderr, "accuracy {:.4} on {} samples", report.accuracy(), report.total());
            let mut w = csv_writer(stdout);
            let mut header = vec!["class".to_string()];
            header.extend((0..CLASSES).map(|c| format!("pred_{c}")));
            header.extend(["count".to_string(), "accuracy".to_string()]);
            w.write_record(&header)?;
            for (c, row) in report.confusion.iter().enumerate() {
                let n: usize = row.iter().sum();
                let acc = if n == 0 { 0.0 } else { row[c] as f64 / n as f64 };
                let mut rec = vec![c.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                rec.extend([n.to_string(), format!("{acc:.6}")]);
                w.write_record(&rec)?;
            }
            let mut rec = vec!["all".to_string()];
            rec.extend((0..CLASSES).map(|p| report.confusion.iter().map(|r| r[p]).sum::<usize>().to_string()));
            rec.extend([report.total().to_string(), format!("{:.6}", report.accuracy())]);
            w.write_record(&rec)?;
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        Command::ProbeRank {
            input,
            synthetic_rank,
            dims,
            ranks,
            iters,
            restarts,
            mu,
            absolute_step,
        } => {
            let ranks = parse_ranks(&ranks).map_err(|e| Failure::Usage(format!("--ranks: {e}")))?;
            let target = match (input, synthetic_rank) {
                (Some(path), _) => {
                    let t = tensor_file::load(&path)?;
                    if t.rank() != 3 {
                        return Err(Failure::Runtime(format!("{} holds a rank-{} tensor, expected 3", path.display(), t.rank())));
                    }
                    t
                }
                (None, Some(k)) => {
                    let d = parse_dims(&dims).map_err(|e| Failure::Usage(format!("--dims: {e}")))?;
                    synthetic_low_rank(d, k, cfg.seed).map_err(|e| Failure::Usage(e.to_string()))?
                }
                (None, None) => return Err(Failure::Usage("probe-rank needs --input or --synthetic-rank".into())),
            };
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Failure::Usage(format!("--mu must be positive, got {mu}")));
            }
            let opts = ProbeOptions {
                step: if absolute_step { StepSize::Absolute(mu) } else { StepSize::NormScaled(mu) },
                iters,
                restarts,
                seed: cfg.seed,
            };
            let _ = writeln!(stderr, "probing ranks {ranks:?} on a {:?} tensor", target.dims());
            let report = rank_probe(&target, &ranks, &opts).map_err(|e| Failure::Runtime(e.to_string()))?;
            let knee = report.knee_estimate.map(|k| k.to_string()).unwrap_or_default();
            let mut w = csv_writer(stdout);
            w.write_record(["rank", "final_error", "relative_error", "iterations_used", "knee_estimate"])?;
            for e in &report.entries {
                w.write_record([
                    e.rank.to_string(),
                    format!("{:.6e}", e.error),
                    format!("{:.6e}", e.relative_error),
                    e.iterations.to_string(),
                    knee.clone(),
                ])?;
            }
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        Command::Cost {
            channels,
            time_steps,
            rank,
            kernel,
            height,
            width,
        } => {
            let pc = PfaConfig::new(rank, time_steps, channels, height, width).with_kernel(kernel);
            pc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let report = pfa_cost(&pc);
            let mut w = csv_writer(stdout);
            w.write_record(["metric", "value"])?;
            w.write_record(["params".to_string(), report.params.to_string()])?;
            w.write_record(["macs".to_string(), report.macs.to_string()])?;
            for t in &report.breakdown {
                let q = match t.quantity {
                    Quantity::Params => "params",
                    Quantity::Macs => "macs",
                };
                w.write_record([format!("{q}.{}", t.label), t.count.to_string()])?;
            }
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        Command::Ablate { seeds, run, synth } => {
            apply_run(&mut cfg, &run)?;
            apply_data(&mut cfg, &synth);
            cfg.validate()?;
            if seeds == 0 {
                return Err(Failure::Usage("--seeds must be positive".into()));
            }
            let mut variants: Vec<(String, Placement, Vec<Dimension>)> = vec![
                ("baseline".into(), Placement::None, vec![]),
                ("full".into(), Placement::AfterEachPool, vec![]),
            ];
            for d in Dimension::ALL {
                variants.push((format!("without_{}", d.name()), Placement::AfterEachPool, vec![d]));
            }
            let mut w = csv_writer(stdout);
            w.write_record(["variant", "ablated", "params", "seeds", "mean_val_acc", "stderr_val_acc"])?;
            for (name, placement, ablate) in variants {
                let mut accs = Vec::new();
                let mut params = 0;
                for s in 0..seeds {
                    let run_cfg = RunConfig {
                        seed: cfg.seed.wrapping_add(s),
                        pfa_placement: placement,
                        ablate: ablate.clone(),
                        ..cfg.clone()
                    };
                    let (tr, va) = synthetic_split(&run_cfg)?;
                    let net = Network::build(&run_cfg)?;
                    params = net.param_count();
                    let out = train(net, &tr, &va, |_| {})?;
                    let acc = out.metrics.last().and_then(|m| m.val_acc).unwrap_or(0.0);
                    let _ = writeln!(stderr, "{name} seed {}: val acc {acc:.3}", run_cfg.seed);
                    accs.push(acc);
                }
                let (mean, se) = mean_and_stderr(&accs);
                w.write_record([
                    name,
                    ablation_label(&ablate),
                    params.to_string(),
                    seeds.to_string(),
                    format!("{mean:.6}"),
                    format!("{se:.6}"),
                ])?;
                w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
            }
        }
        Command::ExportAttention {
            checkpoint,
            out,
            sample,
            index,
        } => {
            let network = Network::load(&checkpoint)?;
            let x = match sample {
                Some(path) => tensor_file::load(path)?,
                None => {
                    let (_, val) = synthetic_split(&network.config)?;
                    let pool = if val.is_empty() { gen_moving_bars(&network.config.synthetic_spec(), network.config.seed)? } else { val };
                    pool.samples
                        .get(index)
                        .cloned()
                        .ok_or_else(|| Failure::Usage(format!("--index {index} out of range ({} samples)", pool.len())))?
                }
            };
            let files = export_attention(&network, &x, &out)?;
            let _ = writeln!(stderr, "wrote {} files to {}", files.len(), out.display());
            let mut w = csv_writer(stdout);
            w.write_record(["file"])?;
            for f in files {
                w.write_record([f.display().to_string()])?;
            }
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn csv_writer_file(path: &Path) -> std::result::Result<csv::Writer<fs::File>, Failure> {
    let file = fs::File::create(path).map_err(|e| Failure::from(io_err(path)(e)))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

/// Takes `T`, `H` and `W` from a loaded dataset.
fn adopt_dataset_shape(cfg: &mut RunConfig, ds: &Dataset) -> std::result::Result<(), Failure> {
    let dims = ds.sample_dims().ok_or(HarnessError::EmptyDataset)?;
    if dims.len() != 4 || dims[1] != 2 {
        return Err(Failure::Runtime(format!("samples must be (T, 2, H, W), got {dims:?}")));
    }
    cfg.time_steps = dims[0];
    cfg.height = dims[2];
    cfg.width = dims[3];
    Ok(())
}

/// `"1:6"` or `"1,2,4"`.
pub fn parse_ranks(s: &str) -> std::result::Result<Vec<usize>, String> {
    let ranks: Vec<usize> = if let Some((lo, hi)) = s.split_once(':') {
        let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
        let hi: usize = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad rank `{p}`")))
            .collect::<std::result::Result<_, _>>()?
    };
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(format!("`{s}` must name positive ranks"));
    }
    if ranks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("`{s}` must be strictly increasing"));
    }
    Ok(ranks)
}

/// `"12x10x8"`.
pub fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse().map_err(|_| format!("bad extent `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] if *a > 0 && *b > 0 && *c > 0 => Ok([*a, *b, *c]),
        _ => Err(format!("`{s}` must be three positive extents like 12x10x8")),
    }
}
