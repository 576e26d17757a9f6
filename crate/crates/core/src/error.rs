use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error)]
pub enum SimError {
    /// Field evaluation requested on or too close to a conductor segment.
    #[error("field evaluation point lies on a coil segment (distance {distance:.3e} m)")]
    SingularFieldPoint { distance: f64 },

    /// An integrator was asked to run with a step that violates its stability guard.
    #[error("time step {dt:.3e} s exceeds stability limit {limit:.3e} s ({context})")]
    TimeStep {
        dt: f64,
        limit: f64,
        context: &'static str,
    },

    /// A physical or scheduling parameter is outside its valid domain.
    #[error("invalid configuration for `{field}`: {message}")]
    InvalidField { field: String, message: String },

    /// Scenario text could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An operation was called on data that cannot support it.
    #[error("{0}")]
    Unsupported(String),
}

impl SimError {
    pub fn invalid_field(field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::InvalidField {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
