//! File formats, WAV IO and the `devid` command line on top of
//! `devid-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod report;
pub mod ttf;
pub mod wav;

pub use error::{Error, Result};
