//! Caption-free membership-inference auditing for conditional diffusion
//! models, on a toy pixel-space denoiser.

// `!(x > 0.0)` style checks are how NaN gets rejected along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
