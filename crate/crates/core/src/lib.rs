//! Truncated Euler-Maruyama simulation of interacting particle systems that
//! approximate McKean-Vlasov SDEs with super-linear coefficients.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod measure;
pub mod model;
pub mod noise;
pub mod report;
pub mod scheme;
pub mod stats;
pub mod truncation;

pub use config::RunConfig;
pub use error::{Result, TemError};
pub use measure::{EmpiricalMeasure, MeasureStats, W2Method, W2Result};
pub use model::ModelSpec;
pub use noise::NoisePlan;
pub use report::{ExperimentKind, ExperimentReport};
pub use scheme::{InitSpec, Observers, ParticleEnsemble, Scheme, SimConfig};
pub use truncation::TruncationRule;
