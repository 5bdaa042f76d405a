//! Operator surface for the hybrid decoder: configuration, pipeline stages,
//! the `hydec` command line and the completion service.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod service;
