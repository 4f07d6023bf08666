//! Desk-scale laboratory for joint speech-text representations.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod numerics;
pub mod persist;
pub mod synthcorpus;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};
