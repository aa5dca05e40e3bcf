//! Experiment runner for adaptive-activation networks: the simulation grid,
//! LeNet5 on MNIST, and single-model tools. The `adaptact` binary is a thin
//! clap front end over these functions.

pub mod error;
pub mod mnist;
pub mod output;
pub mod table1;
pub mod tools;

pub use error::{CliError, Result};
