pub mod cli;
pub mod clustering;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod predictor;
pub mod seed;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
