//! Nonlinear multiview component analysis.
//!
//! Each view is modelled as a channel-wise invertible distortion of a linear
//! mixture of shared and view-specific latent components. Training learns a
//! per-view de-distortion map `f`, a re-distortion map `g` and a linear
//! operator `B` so that `B f(y)` of every view matches a common whitened,
//! zero-mean latent matrix `U`.

// `!(x > 0.0)` also rejects NaN; index loops read better in the matrix code.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod nmca;
pub mod numerics;
pub mod synth;

pub use error::{NmcaError, Result};
pub use numerics::Matrix;
