//! Sparse function learning on Lorenz-96 data with adaptive group-Lasso networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`] integrates the Lorenz-96 system with fixed-step RK4.
//! * [`datagen`] turns trajectories into noisy, standardized regression datasets.
//! * [`network`] is a dense tanh regression network with hand-written gradients.
//! * [`optimize`] holds Adam, the group proximal operator and the penalized training loop.
//! * [`dictionary`] is the sparse monomial-dictionary baseline.
//! * [`selection`] sweeps the regularization path and scores it with BIC.
//! * [`metrics`] computes sensitivity, specificity and relative test error.
//! * [`harness`] wires everything into replicated experiments with CSV/JSON output.
//!
//! Data-parallel loops (row chunks of the batch gradient, λ-grid points,
//! replicates) go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and a plain sequential loop otherwise.

pub mod datagen;
pub mod dictionary;
pub mod dynamics;
pub mod error;
pub mod fastmath;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod optimize;
pub mod par;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
