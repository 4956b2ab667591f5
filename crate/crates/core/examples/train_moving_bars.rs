//! Trains the toy spiking VGG on moving bars and prints the metric log.
//!
//!     cargo run --release --example train_moving_bars -- [seed] [none]

use std::time::Instant;

use pfa::harness::config::{Placement, RunConfig};
use pfa::harness::data::gen_moving_bars;
use pfa::harness::model::Network;
use pfa::harness::train::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let placement = match args.next().as_deref() {
        Some("none") => Placement::None,
        _ => Placement::AfterEachPool,
    };
    let cfg = RunConfig {
        seed,
        rank: Some(4),
        pfa_placement: placement,
        val_fraction: 0.2,
        ..RunConfig::default()
    };
    let data = gen_moving_bars(&cfg.synthetic_spec(), cfg.seed)?;
    let (train_set, val_set) = data.split(cfg.val_fraction, cfg.seed);
    let net = Network::build(&cfg)?;
    println!("{} parameters, {} train / {} val", net.param_count(), train_set.len(), val_set.len());

    let start = Instant::now();
    train(net, &train_set, &val_set, |m| {
        println!(
            "epoch {:>2}  loss {:.4}  train {:.3}  val {:.3}  ({:.1}s)",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.val_acc.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
    })?;
    Ok(())
}
