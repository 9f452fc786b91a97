//! Post-processing and verification of simulator output.

pub mod audit;
pub mod blowup;
pub mod convergence;
pub mod flights;
pub mod poisson_tail;
pub mod wasserstein;

pub use crate::measure::EmpiricalMeasure;
pub use wasserstein::{wasserstein1, wasserstein1_v};
