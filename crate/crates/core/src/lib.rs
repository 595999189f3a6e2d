pub mod data;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod learners;
pub mod oracles;
pub mod rng;
pub mod report;
pub mod sampling;
pub mod session;
pub mod stats;

pub use error::{Error, Result};
