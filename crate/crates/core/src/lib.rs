//! Convolutional dictionary learning by block proximal gradient with diagonal
//! majorizers.
//!
//! The crate is layered bottom-up:
//! [`signal_ops`] (padded-grid convolution and truncation),
//! [`majorizers`] (diagonal curvature bounds), [`prox`] (shrinkage and the
//! unit-ball prox), [`engine`] (the generic block solver), [`cdl`] (two-block,
//! multi-block and contrast-enhanced dictionary learning), [`denoise`] and
//! [`data`] (preprocessing and image IO). [`dense`] holds explicit-matrix
//! oracles for desk-scale verification.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdl;
pub mod data;
pub mod denoise;
pub mod dense;
pub mod engine;
mod error;
pub mod majorizers;
pub mod prox;
pub mod signal_ops;

pub use error::{Error, Result};
