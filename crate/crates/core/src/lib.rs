//! Evolution-gene modeling for multivariate time series.
//!
//! The pipeline has three stages:
//!
//! 1. [`recognition`]: k-means on per-window mean/variance statistics gives an
//!    initial gene assignment, which a recurrent classifier then refines by
//!    repeated fit-and-relabel rounds.
//! 2. [`generation`]: a conditional encoder/generator/discriminator learns how
//!    each gene produces its windows (KL + feature-matching objective).
//! 3. [`application`]: a recurrent fusion layer combines raw windows, gene
//!    assignments and latent codes to forecast the next window or classify the
//!    upcoming event.
//!
//! [`numcore`] is the small dense-tensor autodiff engine everything is built on.

pub mod application;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod generation;
pub mod numcore;
pub mod persistence;
pub mod recognition;

pub use error::{GeneError, Result};
