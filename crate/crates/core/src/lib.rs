//! Projected-full attention (PFA) for spiking neural networks, with the small
//! tensor/autodiff engine, LIF dynamics, CP rank analysis, cost model and
//! training harness it needs.

pub mod cli;
pub mod cost;
pub mod cp;
pub mod harness;
pub mod pfa;
pub mod snn;
pub mod tensor;
