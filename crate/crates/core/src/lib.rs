//! Variational Bayesian image segmentation with a hidden Potts smoothness prior.
//!
//! The crate is `no_std` and only needs an allocator. It contains the numerical
//! core: grid containers and 4-neighbourhoods, the special functions used by the
//! variational updates, the local Potts likelihood and its maximum-likelihood
//! smoothness estimator, the variational Bayes engine, initializers, and the
//! pure evaluation metrics. File formats, the phantom generator and the CLI live
//! in the `hpotts` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod grid;
pub mod init;
pub mod linalg;
mod math;
pub mod potts;
pub mod special;
pub mod vb;

pub use error::{Error, Result};
pub use grid::{ImageGrid, LabelField, Mask, NeighborCountField, ResponsibilityField};
pub use potts::{BetaFit, BetaFitConfig, SmoothnessParams};
pub use vb::{ClampSet, PosteriorHyperparams, PriorHyperparams, VbConfig, VbFit};
