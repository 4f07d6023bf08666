//! Representation probes: pooled embeddings, direct and anchored retrieval,
//! t-SNE and scatter plots.

mod embed;
mod probe;
mod svg;
mod tsne;

pub use embed::*;
pub use probe::*;
pub use svg::*;
pub use tsne::*;
