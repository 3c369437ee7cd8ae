//! Batch commands and the session HTTP service.

pub mod commands;
pub mod config;
pub mod service;
