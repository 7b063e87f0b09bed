//! Channel estimation, training design and detection for full-duplex
//! amplify-and-forward relays with residual self-interference.

// `!(v > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crb;
pub mod delay;
pub mod design;
pub mod equalization;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod freq_selective;
pub mod linalg;
pub mod model;
pub mod multi_relay;
pub mod optim;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
