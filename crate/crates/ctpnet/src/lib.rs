//! Files, codecs, dataset generation and the `ctpnet` command line on top of
//! [`ctpnet_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod manifest;
pub mod report;

pub use error::{AppError, FailureClass, Result};
