//! Report-producing studies: convergence order, stability, moment bounds,
//! invariant measures, propagation of chaos and the i.i.d. rate probe.
//!
//! Independent sub-runs execute concurrently, each with its own noise plan;
//! reports are assembled in a fixed order so reruns are bit-identical.

pub mod chaos;
pub mod convergence;
pub mod fournier;
pub mod invariant;
pub mod moments;
pub mod simulate;
pub mod stability;

pub use chaos::{chaos_experiment, ChaosParams};
pub use convergence::{convergence_experiment, ConvergenceParams};
pub use fournier::{
    fournier_rate_probe, ConstantSampler, FournierParams, ModelLawSampler, NormalSampler, Sampler,
    DEFAULT_REFERENCE_SIZE,
};
pub use invariant::{invariant_measure_experiment, HistogramSpec, InvariantParams};
pub use moments::{moment_bound_experiment, MomentBoundParams};
pub use simulate::{simulate_experiment, SimulateParams};
pub use stability::{stability_experiment, StabilityParams};
