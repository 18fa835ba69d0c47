//! Simulation and correlation power analysis of weight leakage from
//! parallel processing elements (PEs) with accumulator registers.
//!
//! * [`leakage`]: per-PE Hamming weight / distance register model.
//! * [`tracegen`]: seeded trace campaigns, binary trace files, imports.
//! * [`cpa`]: hypothesis spaces and Pearson-based attacks.
//! * [`metrics`]: SNR, cross-PE dependence, crossing points.
//! * [`fitting`]: exponential decay fits of correlation curves.
//! * [`sweep`]: streaming `(n_pe, run)` sweeps that feed the metrics.
//! * [`checks`]: tolerance checks against [`reference`] values.

pub mod checks;
pub mod cpa;
pub mod error;
pub mod fitting;
pub mod leakage;
pub mod matrix;
pub mod metrics;
pub mod reference;
pub mod seed;
pub mod sweep;
pub mod tracegen;

pub use error::{CorrelationError, Error, FitError, FormatError, Result};
pub use leakage::{ArrayConfig, LeakageModel, LeakageSample, OperandEncoding};
pub use matrix::Matrix;
