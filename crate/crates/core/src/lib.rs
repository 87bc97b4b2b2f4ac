pub mod baselines;
pub mod caltv_model;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod labeling;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod train;

#[cfg(feature = "cli")]
pub mod cli;
#[cfg(feature = "cli")]
pub mod config;
