//! Command-line driver: configuration, on-disk layout and stage runners.

pub mod config;
pub mod layout;
pub mod pipeline;
pub mod stages;
