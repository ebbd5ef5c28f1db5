//! Files, network clients and the command line around `embsteal-core`.

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod harvest;
pub mod live;
pub mod table;
pub mod trec;
pub mod tsv;

pub use embsteal_core as core;
pub use error::{AppError, Result};
