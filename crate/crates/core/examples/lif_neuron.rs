//! Drives one LIF neuron with a constant current and prints membrane and
//! spikes per step, plus the surrogate gradient around threshold.

use pfa::snn::{lif_step, LifParams, LifState};
use pfa::tensor::DenseTensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = LifParams::default();
    let current = DenseTensor::full(&[1], 1.5)?;
    let mut state = LifState::resting(&[1], &params)?;
    println!("t  membrane  spike");
    for t in 0..10 {
        let (next, spikes) = lif_step(&state, &current, &params)?;
        state = next;
        println!("{t:<2} {:>8.4}  {}", state.membrane.get(&[0]), spikes.get(&[0]));
    }

    println!("\nsurrogate gradient (alpha = {}):", params.surrogate_alpha);
    for h in [0.0, 0.5, 0.9, 1.0, 1.1, 1.5, 2.0] {
        println!("  H = {h:.1}  dS/dH = {:.4}", params.surrogate_grad(h));
    }
    Ok(())
}
