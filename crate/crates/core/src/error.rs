use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum TemError {
    /// Invalid input to a pure numerical routine (empty cloud, dimension mismatch).
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested distance method does not support the given inputs.
    #[error("unsupported method: {0}")]
    Unsupported(String),

    /// Growth exponent of zero: truncation is unnecessary, use plain EM.
    #[error("degenerate growth: alpha = 0 gives a constant phi, truncation is not needed")]
    DegenerateGrowth,

    /// h(dt) does not exceed phi(0), so the truncation radius is undefined.
    #[error("step size too large: h({dt}) = {h} must exceed phi(0) = {phi0}")]
    StepSizeTooLarge { dt: f64, h: f64, phi0: f64 },

    /// Invalid experiment or run configuration; `field` names the offending entry.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// A step size that is not a power-of-two multiple of the finer grid.
    #[error("non-dyadic step in `{field}`: {coarse} is not a power-of-two multiple of {fine}")]
    NonDyadic {
        field: String,
        coarse: f64,
        fine: f64,
    },

    /// A non-finite state was produced before projection.
    #[error("numeric overflow at step {step} for particle {particle}")]
    NumericOverflow { particle: usize, step: u64 },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TemError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        TemError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TemError>;
