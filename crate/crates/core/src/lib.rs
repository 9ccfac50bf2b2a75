pub mod camera;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod lens;
pub mod lstsq;
pub mod poly;
pub mod raypass;

pub use error::{Error, Result};
