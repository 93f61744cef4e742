//! Command-line front end: configuration, commands, output layout, charts.

pub mod app;
pub mod commands;
pub mod config;
pub mod output;
pub mod svg;
