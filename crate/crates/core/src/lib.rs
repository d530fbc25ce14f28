//! Synthesizes link-utilization traces as seen by decoy servers during the
//! warm-up of a link-flooding attack, trains three detector families on the
//! resulting windows, and evaluates how early each one fires.

pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod io;
pub mod models;
pub mod nn;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
