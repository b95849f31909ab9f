pub mod data;
pub mod diagnosis;
pub mod error;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
