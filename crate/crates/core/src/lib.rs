pub mod cli;
pub mod debias;
pub mod error;
pub mod fairness;
pub mod nn;
pub mod registry;
pub mod scenario;
pub mod service;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
