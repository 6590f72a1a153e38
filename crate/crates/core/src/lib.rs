//! Estimation of smooth signal tensors observed under unknown index
//! permutations.
//!
//! The observation model is `Y = Theta o pi + noise`, where `Theta` is the
//! grid discretization of a smooth function and `pi` permutes the indices of
//! each mode. The crate provides:
//!
//! - dense order-`m` tensors with masks, permutation algebra, norms and the
//!   `PSTN` binary format ([`tensor`], [`pstn`]);
//! - generative functions, signal synthesis and noise models ([`models`]);
//! - block-wise polynomial least squares ([`blockpoly`]);
//! - the two-stage Borda count estimator with closed-form and
//!   cross-validated hyperparameters ([`borda`]);
//! - baseline estimators: exhaustive least squares over all permutations,
//!   singular value thresholding, spectral constant-block fits
//!   ([`baselines`]);
//! - a reproducible simulation/benchmark harness with CSV/JSON reports
//!   ([`experiments`]).

pub mod baselines;
pub mod blockpoly;
pub mod borda;
pub mod error;
pub mod experiments;
pub mod models;
pub mod pstn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, ModePermutations};
