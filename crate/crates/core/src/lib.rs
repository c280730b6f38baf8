pub mod degradation;
pub mod error;
pub mod init;
pub mod io;
pub mod metrics;
pub mod tensor;
pub mod optim;
pub mod solver;
pub mod transform;
pub mod cli;

pub use error::{Error, Result};
