//! Removal of unwanted variation from replicated high-dimensional assays
//! using replicates and negative control variables (RUV-III), with
//! pseudo-replicates of pseudo-samples (PRPS) and a simulation harness.

pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod projections;
pub mod prps;
pub mod ruv3;
pub mod simulate;

pub use error::{Error, ErrorClass, Issue, Result};
pub use model::{build_mapping, AssayMatrix, ControlMask, Dataset, MappingMatrix};
pub use ruv3::{fit, k_scan, FitOptions, KScanResult, Ruv3Fit};
