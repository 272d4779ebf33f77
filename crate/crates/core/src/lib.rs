//! Sparse kernel multi-task learning.
//!
//! Learns `T` regression or one-vs-all classification tasks jointly with a
//! separable matrix-valued kernel `k(x, x′)·A`. The task-structure matrix
//! `A` is estimated together with the predictors by alternating a
//! kernel-ridge solve for the coefficients with a primal-dual splitting solve
//! for a sparse `A`.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.


pub mod cli;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod structure;
pub mod supervised;
pub mod sweep;

pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use kernels::{KernelKind, KernelSpec};
pub use model::Hyperparams;
pub use scalar::Real;
pub use trainer::{FitReport, FitStatus, Scoring};

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Dataset = model::Dataset<f64>;
pub type StructureMatrix = model::StructureMatrix<f64>;
pub type MultiTaskModel = model::MultiTaskModel<f64>;
pub type FitMode = trainer::FitMode<f64>;
pub type SynthInstance = synth::SynthInstance<f64>;
