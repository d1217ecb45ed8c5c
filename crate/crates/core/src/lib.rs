//! Grokking and circuit-efficiency toolkit: a minimal two-circuit
//! competition model, circuit-allocation theory checks, modular arithmetic
//! datasets, a from-scratch one-layer transformer with AdamW, trig-basis
//! circuit analysis, and the experiment harness built on top of them.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod fourier;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod sim;
pub mod tensor;
pub mod theory;
pub mod train;
pub mod util;

pub use error::{Error, Result};

/// Minimal-model simulation state/config at f64 precision (the default).
pub type SimConfig64 = sim::SimConfig<f64>;
pub type SimState64 = sim::SimState<f64>;

/// Transformer parameters at training precision (f32) and analysis
/// precision (f64).
pub type Model32 = model::ModelParams<f32>;
pub type Model64 = model::ModelParams<f64>;

/// Circuit-allocation problem at f64 precision.
pub type Allocation64 = theory::AllocationProblem<f64>;
