//! HTTP service and command-line front end for the intent gate.

pub mod cli;
pub mod config;
pub mod ring;
pub mod server;
