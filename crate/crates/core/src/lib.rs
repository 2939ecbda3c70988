pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod icp;
pub mod pipeline;
pub mod spatial;
pub mod tsdf;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
