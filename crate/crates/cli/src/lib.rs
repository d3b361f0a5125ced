//! Command-line front end and review service for `seavae`.

pub mod config;
pub mod server;
