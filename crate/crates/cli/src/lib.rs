//! Command-line entry points and the read-only HTTP service.

pub mod commands;
pub mod server;
pub mod session;
