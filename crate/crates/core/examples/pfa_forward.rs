//! One PFA pass over a random spike tensor: projection shapes, attention
//! range and the effect of ablating each dimension.

use pfa::pfa::{ablate_dimension, amc_compose, fuse, lpst_forward, pfa_forward, Dimension, PfaConfig, PfaWeights};
use pfa::tensor::DenseTensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = PfaConfig::new(4, 8, 16, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = DenseTensor::uniform(&cfg.input_dims(), 0.0, 1.0, &mut rng)?.map(|v| (v > 0.7) as u8 as f32);
    let w = PfaWeights::init(&cfg, &mut rng)?;
    println!("input {:?}, {} PFA parameters", x.dims(), w.param_count());

    let p = lpst_forward(&x, &w, &cfg)?;
    println!("U_t {:?}  U_c {:?}  U_s {:?}", p.temporal.dims(), p.channel.dims(), p.spatial.dims());

    let a = amc_compose(&p, &cfg)?;
    let (lo, hi) = a.values.data().iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    println!("attention {:?} in [{lo:.4}, {hi:.4}]", a.values.dims());

    let y = pfa_forward(&x, &w, &cfg)?;
    println!("output norm {:.4} (input {:.4})", y.norm(), x.norm());

    for d in Dimension::ALL {
        let ablated = amc_compose(&ablate_dimension(&p, &[d]), &cfg)?;
        println!("without {:<8} output norm {:.4}", d.name(), fuse(&x, &ablated)?.norm());
    }
    Ok(())
}
