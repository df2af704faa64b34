pub mod baseline;
pub mod cli;
pub mod edges;
pub mod error;
mod geom;
pub mod ingest;
pub mod json;
pub mod metrics;
pub mod optimize;
pub mod patchcloud;
pub mod render;
pub mod triangulate;

pub use error::{Error, Result};
