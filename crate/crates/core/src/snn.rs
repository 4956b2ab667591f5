//! Leaky integrate-and-fire dynamics with an arctan surrogate gradient, and the
//! training losses (cross-entropy and the temporal-efficient-training mix).

use std::f64::consts::PI;

use crate::tensor::{CustomOp, DenseTensor, Result, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    /// Membrane time constant, `>= 1`.
    pub tau: f32,
    pub v_threshold: f32,
    pub v_reset: f32,
    /// Sharpness of the arctan surrogate, `> 0`.
    pub surrogate_alpha: f32,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate_alpha: 2.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) {
            return Err(TensorError::InvalidArgument(format!("tau {} < 1", self.tau)));
        }
        if !(self.v_threshold > self.v_reset) {
            return Err(TensorError::InvalidArgument(format!(
                "v_threshold {} must exceed v_reset {}",
                self.v_threshold, self.v_reset
            )));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(TensorError::InvalidArgument(format!(
                "surrogate_alpha {} must be positive",
                self.surrogate_alpha
            )));
        }
        Ok(())
    }

    #[inline]
    fn charge(&self, v: f32, x: f32) -> f32 {
        v + (x - (v - self.v_reset)) / self.tau
    }

    /// Surrogate `dS/dH`: `(alpha/2) / (1 + (pi/2 * alpha * (H - v_th))^2)`,
    /// peaking at `alpha/2` on the threshold.
    #[inline]
    pub fn surrogate_grad(&self, h: f32) -> f32 {
        let alpha = self.surrogate_alpha as f64;
        let z = PI / 2.0 * alpha * (h - self.v_threshold) as f64;
        (alpha / 2.0 / (1.0 + z * z)) as f32
    }
}

/// Membrane potentials of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub membrane: DenseTensor,
}

impl LifState {
    pub fn resting(dims: &[usize], params: &LifParams) -> Result<Self> {
        Ok(LifState {
            membrane: DenseTensor::full(dims, params.v_reset)?,
        })
    }
}

/// One integrate/fire/reset step. Returns the new state and binary spikes.
pub fn lif_step(
    state: &LifState,
    input: &DenseTensor,
    params: &LifParams,
) -> Result<(LifState, DenseTensor)> {
    if state.membrane.dims() != input.dims() {
        return Err(TensorError::ShapeMismatch {
            op: "lif_step",
            left: state.membrane.dims().to_vec(),
            right: input.dims().to_vec(),
        });
    }
    let n = input.len();
    let mut v_next = Vec::with_capacity(n);
    let mut spikes = Vec::with_capacity(n);
    for (&v, &x) in state.membrane.data().iter().zip(input.data()) {
        let h = params.charge(v, x);
        if h >= params.v_threshold {
            spikes.push(1.0);
            v_next.push(params.v_reset);
        } else {
            spikes.push(0.0);
            v_next.push(h);
        }
    }
    Ok((
        LifState {
            membrane: DenseTensor::new(input.dims(), v_next)?,
        },
        DenseTensor::new(input.dims(), spikes)?,
    ))
}

struct LifTrace {
    /// Pre-reset potentials `H`, laid out like the input.
    charge: Vec<f32>,
    spikes: Vec<f32>,
}

fn lif_run(inputs: &DenseTensor, params: &LifParams) -> Result<LifTrace> {
    params.validate()?;
    if inputs.rank() < 1 {
        return Err(TensorError::InvalidShape(
            "lif_sequence needs a leading time axis".into(),
        ));
    }
    let steps = inputs.dims()[0];
    let width = inputs.len() / steps;
    let mut v = vec![params.v_reset; width];
    let mut charge = vec![0.0f32; inputs.len()];
    let mut spikes = vec![0.0f32; inputs.len()];
    for t in 0..steps {
        let range = t * width..(t + 1) * width;
        let x = &inputs.data()[range.clone()];
        let (hs, ss) = (&mut charge[range.clone()], &mut spikes[range]);
        for i in 0..width {
            let h = params.charge(v[i], x[i]);
            hs[i] = h;
            if h >= params.v_threshold {
                ss[i] = 1.0;
                v[i] = params.v_reset;
            } else {
                v[i] = h;
            }
        }
    }
    Ok(LifTrace { charge, spikes })
}

/// Folds [`lif_step`] over the leading time axis, starting from rest.
pub fn lif_sequence(inputs: &DenseTensor, params: &LifParams) -> Result<DenseTensor> {
    let trace = lif_run(inputs, params)?;
    DenseTensor::new(inputs.dims(), trace.spikes)
}

struct LifBackward {
    params: LifParams,
    charge: Vec<f32>,
}

impl CustomOp for LifBackward {
    fn name(&self) -> &'static str {
        "lif_sequence"
    }

    fn backward(
        &self,
        inputs: &[&DenseTensor],
        output: &DenseTensor,
        grad: &DenseTensor,
    ) -> Result<Vec<DenseTensor>> {
        let x = inputs[0];
        let steps = x.dims()[0];
        let width = x.len() / steps;
        let decay = 1.0 - 1.0 / self.params.tau;
        let inv_tau = 1.0 / self.params.tau;
        let mut grad_in = vec![0.0f32; x.len()];
        // Gradient reaching V[t] from step t+1; the reset mask is detached.
        let mut grad_v = vec![0.0f32; width];
        for t in (0..steps).rev() {
            let base = t * width;
            for i in 0..width {
                let j = base + i;
                let s = output.data()[j];
                let gh = grad.data()[j] * self.params.surrogate_grad(self.charge[j])
                    + grad_v[i] * (1.0 - s);
                grad_in[j] = gh * inv_tau;
                grad_v[i] = gh * decay;
            }
        }
        Ok(vec![DenseTensor::new(x.dims(), grad_in)?])
    }
}

/// Tape version of [`lif_sequence`]: forward emits binary spikes, backward uses
/// the surrogate derivative in place of the Heaviside step.
pub fn lif_sequence_var(tape: &mut Tape, inputs: Var, params: &LifParams) -> Result<Var> {
    let x = tape.value(inputs);
    let trace = lif_run(x, params)?;
    let out = DenseTensor::new(x.dims(), trace.spikes)?;
    Ok(tape.custom(
        &[inputs],
        out,
        Box::new(LifBackward {
            params: *params,
            charge: trace.charge,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TetParams {
    /// Weight of the regulariser, in `[0, 1]`.
    pub lambda: f32,
    /// Target the per-step logits are pulled toward (set to `v_threshold`).
    pub phi: f32,
}

impl Default for TetParams {
    fn default() -> Self {
        TetParams {
            lambda: 0.05,
            phi: 1.0,
        }
    }
}

impl TetParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TensorError::InvalidArgument(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn log_softmax_row(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = logits
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// `-log softmax(logits)[label]` for a single logit vector.
pub fn cross_entropy(logits: &DenseTensor, label: usize) -> Result<f32> {
    if logits.rank() != 1 {
        return Err(TensorError::InvalidShape(format!(
            "cross_entropy expects a vector, got {:?}",
            logits.dims()
        )));
    }
    if label >= logits.len() {
        return Err(TensorError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    Ok(-log_softmax_row(logits.data())[label] as f32)
}

fn check_outputs(outputs: &DenseTensor, label: usize) -> Result<(usize, usize)> {
    if outputs.rank() != 2 {
        return Err(TensorError::InvalidShape(format!(
            "tet_loss expects (T, K) logits, got {:?}",
            outputs.dims()
        )));
    }
    let (steps, classes) = (outputs.dims()[0], outputs.dims()[1]);
    if label >= classes {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    Ok((steps, classes))
}

/// Mix of per-step cross-entropy and the mean squared pull toward `phi`:
/// `(1-l)/T * sum_t CE(O_t, y) + l/T * sum_t MSE(O_t, phi)`.
pub fn tet_loss(outputs: &DenseTensor, label: usize, params: &TetParams) -> Result<f32> {
    params.validate()?;
    let (steps, classes) = check_outputs(outputs, label)?;
    let (mut ce, mut mse) = (0.0f64, 0.0f64);
    for row in outputs.data().chunks(classes) {
        ce -= log_softmax_row(row)[label];
        mse += row
            .iter()
            .map(|&v| (v as f64 - params.phi as f64).powi(2))
            .sum::<f64>()
            / classes as f64;
    }
    let lambda = params.lambda as f64;
    Ok(((1.0 - lambda) * ce / steps as f64 + lambda * mse / steps as f64) as f32)
}

struct TetBackward {
    label: usize,
    params: TetParams,
}

impl CustomOp for TetBackward {
    fn name(&self) -> &'static str {
        "tet_loss"
    }

    fn backward(
        &self,
        inputs: &[&DenseTensor],
        _output: &DenseTensor,
        grad: &DenseTensor,
    ) -> Result<Vec<DenseTensor>> {
        let o = inputs[0];
        let (steps, classes) = (o.dims()[0], o.dims()[1]);
        let upstream = grad.data()[0] as f64;
        let lambda = self.params.lambda as f64;
        let ce_w = (1.0 - lambda) / steps as f64;
        let mse_w = lambda / steps as f64 * 2.0 / classes as f64;
        let mut g = Vec::with_capacity(o.len());
        for row in o.data().chunks(classes) {
            let logp = log_softmax_row(row);
            for (k, (&v, lp)) in row.iter().zip(logp).enumerate() {
                let onehot = if k == self.label { 1.0 } else { 0.0 };
                let d = ce_w * (lp.exp() - onehot) + mse_w * (v as f64 - self.params.phi as f64);
                g.push((upstream * d) as f32);
            }
        }
        Ok(vec![DenseTensor::new(o.dims(), g)?])
    }
}

/// Tape version of [`tet_loss`] over `(T, K)` logits.
pub fn tet_loss_var(tape: &mut Tape, outputs: Var, label: usize, params: &TetParams) -> Result<Var> {
    let value = tet_loss(tape.value(outputs), label, params)?;
    Ok(tape.custom(
        &[outputs],
        DenseTensor::scalar(value),
        Box::new(TetBackward {
            label,
            params: *params,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_state(v: f32) -> LifState {
        LifState {
            membrane: DenseTensor::new(&[1], vec![v]).unwrap(),
        }
    }

    #[test]
    fn rest_state_stays_at_rest() {
        let p = LifParams::default();
        let (s, spk) = lif_step(&scalar_state(0.0), &DenseTensor::zeros(&[1]).unwrap(), &p).unwrap();
        assert_eq!(s.membrane.data(), &[0.0]);
        assert_eq!(spk.data(), &[0.0]);
    }

    #[test]
    fn strong_input_fires_and_resets() {
        let p = LifParams::default();
        let x = DenseTensor::new(&[1], vec![2.0]).unwrap();
        let (s, spk) = lif_step(&scalar_state(0.0), &x, &p).unwrap();
        assert_eq!(spk.data(), &[1.0]);
        assert_eq!(s.membrane.data(), &[0.0]);
    }

    #[test]
    fn weak_input_charges_without_firing() {
        let p = LifParams::default();
        let x = DenseTensor::new(&[1], vec![0.5]).unwrap();
        let (s, spk) = lif_step(&scalar_state(0.0), &x, &p).unwrap();
        assert_eq!(spk.data(), &[0.0]);
        assert_eq!(s.membrane.data(), &[0.25]);
    }

    #[test]
    fn lif_step_shape_mismatch() {
        let p = LifParams::default();
        let x = DenseTensor::zeros(&[2]).unwrap();
        assert!(lif_step(&scalar_state(0.0), &x, &p).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = LifParams::default();
        p.tau = 0.5;
        assert!(p.validate().is_err());
        let mut p = LifParams::default();
        p.v_reset = 2.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn sequence_examples() {
        let p = LifParams::default();
        let zeros = DenseTensor::zeros(&[5, 3]).unwrap();
        assert_eq!(lif_sequence(&zeros, &p).unwrap(), zeros);
        let twos = DenseTensor::full(&[6, 2], 2.0).unwrap();
        assert_eq!(lif_sequence(&twos, &p).unwrap(), DenseTensor::ones(&[6, 2]).unwrap());
    }

    #[test]
    fn sequence_matches_scalar_fold() {
        let p = LifParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DenseTensor::uniform(&[7, 4, 3], -1.0, 3.0, &mut rng).unwrap();
        let spikes = lif_sequence(&x, &p).unwrap();
        for i in 0..12 {
            let mut v = 0.0f32;
            for t in 0..7 {
                let h = v + (x.data()[t * 12 + i] - (v - 0.0)) / 2.0;
                let s = if h >= 1.0 { 1.0 } else { 0.0 };
                v = if s == 1.0 { 0.0 } else { h };
                assert_eq!(spikes.data()[t * 12 + i], s);
            }
        }
    }

    #[test]
    fn surrogate_is_peaked_and_symmetric() {
        let p = LifParams::default();
        assert!((p.surrogate_grad(p.v_threshold) - p.surrogate_alpha / 2.0).abs() < 1e-7);
        let peak = p.surrogate_grad(p.v_threshold);
        for i in 1..200 {
            let d = i as f32 * 0.025;
            let up = p.surrogate_grad(p.v_threshold + d);
            let down = p.surrogate_grad(p.v_threshold - d);
            assert!(up > 0.0 && down > 0.0);
            assert!((up - down).abs() <= 1e-6 * up.max(down));
            assert!(up < peak);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = DenseTensor::zeros(&[4]).unwrap();
        assert!((cross_entropy(&uniform, 2).unwrap() - 4f32.ln()).abs() < 1e-6);
        let confident = DenseTensor::new(&[3], vec![1000.0, 0.0, 0.0]).unwrap();
        assert!(cross_entropy(&confident, 0).unwrap().abs() < 1e-6);
        assert!(matches!(
            cross_entropy(&uniform, 4),
            Err(TensorError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn cross_entropy_matches_f64_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f32> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let lse: f64 = logits.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln();
        let expected = lse - logits[4] as f64;
        let got = cross_entropy(&DenseTensor::new(&[6], logits).unwrap(), 4).unwrap();
        assert!((got as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn tet_degenerate_mixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = DenseTensor::uniform(&[3, 4], -2.0, 2.0, &mut rng).unwrap();
        let ce_only = TetParams { lambda: 0.0, phi: 1.0 };
        let mean_ce: f32 = (0..3)
            .map(|t| {
                let row = DenseTensor::new(&[4], o.data()[t * 4..(t + 1) * 4].to_vec()).unwrap();
                cross_entropy(&row, 1).unwrap()
            })
            .sum::<f32>()
            / 3.0;
        assert!((tet_loss(&o, 1, &ce_only).unwrap() - mean_ce).abs() < 1e-6);

        let at_phi = DenseTensor::full(&[3, 4], 1.0).unwrap();
        let mse_only = TetParams { lambda: 1.0, phi: 1.0 };
        assert_eq!(tet_loss(&at_phi, 0, &mse_only).unwrap(), 0.0);
    }

    #[test]
    fn tet_hand_arithmetic() {
        // T=2, K=2, lambda=0.5, phi=1.
        // Step 0 logits (0, 0): CE = ln 2, MSE = 1.
        // Step 1 logits (2, 0), label 0: CE = ln(1 + e^-2), MSE = (1 + 1)/2 = 1.
        let o = DenseTensor::new(&[2, 2], vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let p = TetParams { lambda: 0.5, phi: 1.0 };
        let ce = 2f64.ln() + (1.0 + (-2f64).exp()).ln();
        let expected = 0.5 / 2.0 * ce + 0.5 / 2.0 * 2.0;
        assert!((tet_loss(&o, 0, &p).unwrap() as f64 - expected).abs() < 1e-6);
        assert!(tet_loss(&o, 0, &TetParams { lambda: 1.5, phi: 1.0 }).is_err());
    }

    #[test]
    fn tet_is_continuous_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let o = DenseTensor::uniform(&[4, 5], -3.0, 3.0, &mut rng).unwrap();
        let ce = tet_loss(&o, 2, &TetParams { lambda: 0.0, phi: 1.0 }).unwrap();
        let mse = tet_loss(&o, 2, &TetParams { lambda: 1.0, phi: 1.0 }).unwrap();
        let eps = 1e-3f32;
        for i in 0..10 {
            let l = i as f32 * 0.099;
            let a = tet_loss(&o, 2, &TetParams { lambda: l, phi: 1.0 }).unwrap();
            let b = tet_loss(&o, 2, &TetParams { lambda: l + eps, phi: 1.0 }).unwrap();
            assert!((a - b).abs() <= eps * (ce + mse) + 1e-6);
        }
    }
}
