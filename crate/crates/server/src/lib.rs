//! Command-line pipeline and HTTP service for breath classification.

pub mod api;
pub mod cli;
pub mod data;
