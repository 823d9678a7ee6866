//! File formats, evaluation harness and command-line front end over
//! `skillgraph-core`.

pub mod cli;
pub mod error;
pub mod eval;
pub mod formats;
pub mod report;

pub use error::{Error, Result};
