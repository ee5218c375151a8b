//! File formats, experiment drivers and the command-line front end of the
//! rolling-window traffic simulator.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod io;

mod error;

pub use error::{Error, Result};
