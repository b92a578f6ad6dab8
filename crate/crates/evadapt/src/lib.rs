pub mod bench;
pub mod checkpoint;
pub mod clock;
pub mod commands;
pub mod config;
mod error;
pub mod io;

pub use error::{Error, Result};
