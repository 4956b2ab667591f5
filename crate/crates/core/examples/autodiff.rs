//! Records a tiny conv -> sigmoid -> matmul graph on a tape and prints the
//! gradients that flow back to the kernel and the dense weights.

use pfa::tensor::{DenseTensor, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new();
    let image = tape.leaf(DenseTensor::uniform(&[1, 1, 5, 5], 0.0, 1.0, &mut rng)?);
    let kernel = tape.leaf(DenseTensor::uniform(&[2, 1, 3, 3], -0.5, 0.5, &mut rng)?);
    let dense = tape.leaf(DenseTensor::uniform(&[50, 3], -0.2, 0.2, &mut rng)?);

    let features = tape.conv2d(image, kernel, 1)?;
    let act = tape.sigmoid(features);
    let flat = tape.reshape(act, &[1, 50])?;
    let logits = tape.matmul(flat, dense)?;
    let loss = tape.sum(logits);
    tape.backward(loss)?;

    println!("loss = {}", tape.value(loss).item().unwrap_or(f32::NAN));
    let gk = tape.grad(kernel).expect("kernel gradient");
    println!("d loss / d kernel {:?}: norm {:.5}", gk.dims(), gk.norm());
    let gd = tape.grad(dense).expect("dense gradient");
    println!("d loss / d dense  {:?}: norm {:.5}", gd.dims(), gd.norm());
    Ok(())
}
