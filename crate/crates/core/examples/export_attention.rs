//! Briefly trains a toy model, saves it, reloads the checkpoint and writes its
//! attention maps for one validation sample.
//!
//!     cargo run --release --example export_attention -- [out_dir]

use pfa::harness::config::RunConfig;
use pfa::harness::export::export_attention;
use pfa::harness::model::Network;
use pfa::harness::train::{synthetic_split, train};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "attention_out".into());
    let cfg = RunConfig {
        epochs: 2,
        samples_per_class: 40,
        ..RunConfig::default()
    };
    let (train_set, val_set) = synthetic_split(&cfg)?;
    let trained = train(Network::build(&cfg)?, &train_set, &val_set, |m| {
        println!("epoch {} loss {:.4} val {:?}", m.epoch, m.train_loss, m.val_acc);
    })?;

    let ckpt = std::path::Path::new(&out).join("checkpoint");
    trained.network.save(&ckpt)?;
    let net = Network::load(&ckpt)?;
    for path in export_attention(&net, &val_set.samples[0], &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
