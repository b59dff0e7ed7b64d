//! Data-driven incident detection for sensor time series.
//!
//! The pipeline estimates a finite-dimensional approximation of the
//! Koopman operator over sliding windows of (kernel-augmented) sensor
//! streams, promotes sparsity in the estimate, and flags incidents when
//! the sparsity pattern changes between consecutive windows. An offline
//! k-means pass over the binarized patterns validates that each scenario
//! produces its own pattern family. A small radial-feeder simulator with
//! dispatchable batteries and Volt/VAR control regenerates desk-scale
//! analogs of the dispatch-change and controller-change case studies.

pub mod cluster;
pub mod detect;
pub mod error;
pub mod feedersim;
pub mod kernel;
pub mod koopman;
pub mod timeseries;

pub use error::{Error, Result};
