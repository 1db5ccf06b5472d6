//! Experiment harness around the regdyn library: configuration files, the
//! predator-prey flow-map benchmark, double-well sweep drivers, and CSV/SVG
//! reporting.

pub mod config;
pub mod experiment;
pub mod lv;
pub mod report;
