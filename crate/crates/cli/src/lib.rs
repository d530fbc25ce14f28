//! Command implementations behind the `xfire` binary, exposed as a library
//! so integration tests can drive them and reuse the config machinery.

pub mod commands;
pub mod config;
