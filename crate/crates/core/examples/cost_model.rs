//! Closed-form parameter and MAC counts for a few PFA sites, checked against
//! counts measured from actual weights and a tallied forward pass.

use pfa::cost::{audit_counts, pfa_cost, standard_conv_macs};
use pfa::pfa::PfaConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>4} {:>3} {:>2} {:>5} {:>8} {:>12} {:>14} audit", "C", "T", "R", "HW", "params", "macs", "conv3x3 macs");
    for (c, t, r, hw) in [(128, 10, 8, 32), (64, 8, 4, 16), (16, 4, 1, 8), (256, 10, 16, 8)] {
        let cfg = PfaConfig::new(r, t, c, hw, hw);
        let cost = pfa_cost(&cfg);
        let ok = audit_counts(&cfg)?.matches;
        println!(
            "{c:>4} {t:>3} {r:>2} {:>5} {:>8} {:>12} {:>14} {}",
            hw * hw,
            cost.params,
            cost.macs,
            standard_conv_macs(&cfg, c, c),
            if ok { "ok" } else { "MISMATCH" }
        );
    }

    let cfg = PfaConfig::new(8, 10, 128, 32, 32);
    println!("\nbreakdown for C=128 T=10 R=8 32x32:");
    for term in pfa_cost(&cfg).breakdown {
        println!("  {:?} {:<24} {}", term.quantity, term.label, term.count);
    }
    Ok(())
}
