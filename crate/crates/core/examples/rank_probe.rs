//! Fits CP decompositions of increasing rank to a synthetic rank-K tensor and
//! reports where the error curve flattens.
//!
//!     cargo run --release --example rank_probe -- [K]

use pfa::cp::{rank_probe, synthetic_low_rank, ProbeOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let target = synthetic_low_rank([12, 10, 8], k, 42)?;
    let ranks: Vec<usize> = (1..=6).collect();
    let report = rank_probe(&target, &ranks, &ProbeOptions { seed: 42, ..ProbeOptions::default() })?;
    println!("rank  residual    relative");
    for e in &report.entries {
        println!("{:<5} {:<11.4e} {:.4e}", e.rank, e.error, e.relative_error);
    }
    match report.knee_estimate {
        Some(r) => println!("knee at R = {r} (true K = {k})"),
        None => println!("no knee found"),
    }
    Ok(())
}
