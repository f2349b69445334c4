//! Causal discovery for linear structural equation models with latent
//! confounders, from one observational dataset and single-variable hard
//! interventions.
//!
//! The model is `X = A H + B X + N` with independent non-Gaussian latents
//! `H`. Fourth-order cumulants of observational and interventional data are
//! decomposed into their reduced mixing matrices, whose pairwise differences
//! are rank one and reveal the columns of `(I - B)^{-1}`.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cumulants;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod recovery;
pub mod simulator;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ColumnAlignment, Intervention, LatentFamily, LatentSpec, SemIcaModel};
