//! Modality encoders, the shared encoder and the task decoders.

mod model;
mod params;

pub use model::*;
pub use params::*;

#[cfg(test)]
mod tests;
