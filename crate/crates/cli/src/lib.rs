//! Command-line front end: argument handling, configuration, corpus
//! fetching and report output.

pub mod app;
pub mod config;
pub mod fetch;
