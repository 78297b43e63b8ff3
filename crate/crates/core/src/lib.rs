#![no_std]
extern crate alloc;

mod error;
pub mod gcn;
pub mod gradcheck;
pub mod graph;
pub mod ingest;
pub mod lateral;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
