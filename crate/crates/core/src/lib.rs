//! Adaptive functional BART for surfaces observed on a 2-D grid.

pub mod basis;
pub mod config;
pub mod data;
pub mod io;
pub mod metrics;
pub mod proposal;
pub mod sampler;
pub mod simgen;
pub mod tree;
