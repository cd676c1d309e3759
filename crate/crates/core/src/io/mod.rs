//! Configuration files, metrics CSV and SVG plots.

pub mod config;
pub mod csv;
pub mod plot;
