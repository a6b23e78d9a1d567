pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod modules;
pub mod nn;
pub mod optim;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
