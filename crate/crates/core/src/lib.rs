//! Quantum-Train (QT) and Quantum Parameter Adaptation (QPA).
//!
//! A simulated RY/CNOT circuit produces `2^N` measurement probabilities. A
//! small shared MLP maps each `(basis bits, probability)` pair to a chunk of
//! parameters for a classical target network, or to the low-rank factors of
//! a LoRA update. Only the circuit angles and the mapping weights are
//! trained; the resulting target network is purely classical.
//!
//! Module map:
//!
//! * [`quantum_sim`] exact statevector simulation and probability Jacobians
//! * [`mapping`] the mapping MLP with hand-written reverse mode
//! * [`paramgen`] chunk planning, parameter generation, gradient splice
//! * [`lora`] LoRA planning, assembly and effective weights
//! * [`forecaster`] compact windowed trajectory regressor
//! * [`baselines`] magnitude pruning and weight sharing
//! * [`data`] tracks, synthetic generator, windowing, great-circle metric
//! * [`train`] optimizers, the hybrid loop, evaluation, sweeps and reports

pub mod audit;
pub mod baselines;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod lora;
pub mod mapping;
mod mlp;
pub mod paramgen;
pub mod quantum_sim;
pub mod train;

pub use error::{Error, Result};
