//! Experiment harness: JSON suite configs, seeded cell execution, CSV/JSON output.

pub mod config;
pub mod output;
pub mod plotdata;
pub mod suite;
