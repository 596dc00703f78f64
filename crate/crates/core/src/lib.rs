//! Energy-based calibration of latent thought embeddings.
//!
//! A small energy network scores blocks of continuous "thought" vectors.
//! A few Langevin steps on that energy refine the thoughts before a frozen
//! decoder reads them. The crate has four layers:
//!
//! - [`tensor`], [`tape`], [`params`]: dense `f64` tensors and a reverse-mode
//!   tape whose gradients are themselves differentiable.
//! - [`energy`], [`langevin`], [`hvp`]: the energy model, residual
//!   reweighting, the Langevin sampler and the closed-form gradient through
//!   an unrolled chain.
//! - [`losses`], [`eval`]: hinge and consistency losses, majority voting and
//!   accuracy metrics.
//! - [`pipeline`], [`cli`]: a toy modular-arithmetic task with a frozen base
//!   decoder and frozen assistant, training, evaluation and the
//!   `thoughtcal` command line.
//!
//! [`gradcheck`] and [`agreement`] hold the finite-difference oracles used
//! by the tests and by `thoughtcal gradcheck`.

pub mod agreement;
pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hvp;
pub mod langevin;
pub mod losses;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use config::{BackpropMode, RunConfig};
pub use energy::{Context, EnergyConfig, EnergyFunction, EnergyModel, QuadraticEnergy, ThoughtBlock};
pub use error::{Error, Result};
pub use langevin::{LangevinConfig, LangevinTrajectory};
pub use losses::{HingeOrientation, LossConfig};
pub use params::{Adam, Gradients, ParamSet, ParamVars, Sgd};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
