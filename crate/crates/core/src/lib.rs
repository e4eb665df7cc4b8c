pub mod bench;
pub mod checks;
pub mod dst;
pub mod error;
pub mod gaussian;
pub mod oracle;
pub mod poisson2d;
pub mod randomness;
pub mod sampling;
pub mod sketch;
pub mod stats;
pub mod universe;

pub use error::{Error, Result};
