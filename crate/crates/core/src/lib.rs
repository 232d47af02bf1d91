//! Score matching for multivariate models when every sample may be missing a
//! different subset of coordinates.
//!
//! The classical score-matching objective needs the model score at fully
//! observed points. When coordinates are missing, the right target is the
//! score of the *observed margin*, which is an expectation of the full score
//! over the conditional law of the missing coordinates. This crate provides
//! two estimators of that quantity and of the induced parameter gradients:
//!
//! * an importance-weighting route ([`iw`]) that imputes missing coordinates
//!   from a fixed proposal and self-normalizes the weights, and
//! * a variational route ([`variational`]) that learns an amortized Gaussian
//!   conditional (an MLP mean plus a shared scale) and alternates its updates
//!   with model updates.
//!
//! Around the estimators sit the supporting pieces: masked datasets and
//! synthetic corruption ([`data`]), score-model parameterizations
//! ([`models`]), truncation-aware weighting ([`truncation`]), a zero-filling
//! baseline ([`zeroed`]), an L1-regularized precision-path pipeline for graph
//! recovery ([`ggm`]), synthetic generators and evaluation metrics
//! ([`synth`]), and replicated desk-scale experiment drivers
//! ([`experiments`]).

pub mod check;
pub mod data;
pub mod error;
pub mod experiments;
pub mod ggm;
pub mod iw;
pub mod linalg;
pub mod mlp;
pub mod models;
pub mod optim;
pub mod proposal;
pub mod rng;
pub mod synth;
pub mod truncation;
pub mod variational;
pub mod zeroed;

pub use error::{Error, Result};

/// Library version, recorded in run manifests for reproducibility.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
