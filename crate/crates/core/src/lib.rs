pub mod ablation;
pub mod connection;
pub mod config;
pub mod coupling;
pub mod dataset;
pub mod error;
pub mod holonomy;
pub mod linalg;
pub mod pca;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
