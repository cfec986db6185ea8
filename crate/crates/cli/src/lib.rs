//! The `faders` command line and HTTP service.

pub mod commands;
pub mod service;
