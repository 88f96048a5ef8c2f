//! Command-line workflows around the `afbart` sampler.

pub mod bench;
pub mod commands;
pub mod error;
pub mod eval;
pub mod heatmap;
