//! Post-hoc calibration under covariate shift.
//!
//! The crate estimates importance weights between a labeled source domain
//! and an unlabeled target domain, then picks a softmax temperature that
//! minimizes an importance-weighted estimate of the target calibration error.
//! A learnable exponent on the weights trades bias for variance and control
//! variates shrink the estimator's variance further. Baseline calibrators,
//! calibration metrics and a synthetic covariate-shift generator with exact
//! density ratios are included.

pub mod density_ratio;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod optimize;
pub mod pipeline;
pub mod scaling;
pub mod synthshift;
pub mod transcal;

pub use density_ratio::{WeightKind, WeightVector};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::{BinningConfig, ProbabilitySet, ReliabilityBins};
pub use pipeline::{CalibrationMap, CalibrationTask, Method, MethodFit, MethodOptions, MetricBlock};
pub use scaling::Temperature;
pub use synthshift::{GeneratedTask, ShiftScenario};
pub use transcal::{EstimatorMode, TransCalConfig, TransCalSolution};
