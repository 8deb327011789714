pub mod detection;
pub mod direction;
pub mod error;
pub mod generator;
pub mod jsonl;
pub mod latent;
pub mod metrics;
pub mod pipeline;
pub mod qa;
pub mod render;
pub mod texture;

pub use error::{Error, Result};
