pub mod analysis;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod interp;
pub mod kernel;
pub mod loss;
pub mod minimize;
pub mod models;
pub mod quadrature;
pub mod solver;
pub mod util;
pub mod verify;

pub use error::{Error, Result};
