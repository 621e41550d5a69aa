//! Gradient-based dimension reduction for binary classification.
//!
//! The pipeline estimates the gradient of the conditional log-odds at many
//! points by solving nearest-neighbor, L1-penalized local logistic
//! problems, averages the outer products of those gradients, and reads the
//! central dimension-reduction subspace off the leading eigenvectors of
//! the averaged matrix. Hyperparameters come from cross-validation: the
//! penalty level at the covariate mean, the subspace dimension through
//! classifier risk on the projected covariates.
//!
//! Modules, bottom up:
//!
//! * [`rng`] — seedable, splittable random streams.
//! * [`neighbors`] — exact k-d tree search and the empirical bandwidth.
//! * [`local_logistic`] — the penalized local fit and its certificates.
//! * [`gradient_field`] — gradient estimates over query points.
//! * [`subspace`] — the averaged outer-product matrix and its eigenbasis.
//! * [`model_select`] — penalty and dimension cross-validation.
//! * [`classify`] — kNN majority vote, misclassification risk, ROC AUC.
//! * [`synthetic`] — benchmark generators with known subspaces.
//! * [`dataio`] — CSV ingestion, standardization, splits.
//! * [`cli`] — the commands behind the `llo` binary.

pub mod classify;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod gradient_field;
pub mod local_logistic;
pub mod model_select;
pub mod neighbors;
pub mod rng;
pub mod subspace;
pub mod synthetic;

pub use error::{Error, Result};
