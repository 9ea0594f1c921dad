//! Distributed differentially private estimation and inference for
//! high-dimensional sparse quantile regression.
//!
//! The crate provides:
//!
//! * calibrated Laplace/Gaussian mechanisms, a peeling top-s selector, and an
//!   exact-fraction budget ledger ([`mechanisms`], [`budget`]);
//! * the Newton-type least-squares transformation of the check loss
//!   ([`kernel`], [`transform`]);
//! * a simulated trusted-coordinator runtime for iterative privatized sparse
//!   estimation over evenly sharded data ([`data`], [`engine`], [`messages`]);
//! * noisy pseudo precision-matrix estimation by constrained l1 column
//!   solves ([`precision`], [`lp`]);
//! * debiased coordinate-wise confidence intervals and a private multiplier
//!   bootstrap for simultaneous inference ([`inference`], [`bootstrap`]);
//! * a simulation lab with seeded replicates and CSV outputs ([`sim`],
//!   [`format`]).

pub mod bootstrap;
pub mod budget;
pub mod data;
pub mod engine;
pub mod error;
pub mod format;
pub mod inference;
pub mod kernel;
pub mod lp;
pub mod precision;
pub mod mechanisms;
pub mod messages;
pub mod sampling;
pub mod sim;
pub mod transform;

pub use error::{DpqrError, Result};
