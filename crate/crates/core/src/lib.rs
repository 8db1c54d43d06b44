pub mod analysis;
pub mod config;
pub mod corpus;
pub mod embedders;
pub mod error;
pub mod model;
pub mod rnnlm;
pub mod segmentation;
pub mod synthetic;
pub mod trainer;
pub mod tying;

pub use error::{Error, Result};
