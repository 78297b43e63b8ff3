//! File formats, run configuration and the command-line driver for
//! [`kssnet_core`].

pub mod cli;
pub mod coco;
pub mod config;
mod error;
pub mod experiment;
pub mod io;

pub use error::{Error, Result};
