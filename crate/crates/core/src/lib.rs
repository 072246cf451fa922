pub mod acquisition;
pub mod attack;
pub mod campaign;
pub mod cascade;
pub mod cli;
pub mod error;
pub mod gp;
pub mod grid;
pub mod powerflow;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
