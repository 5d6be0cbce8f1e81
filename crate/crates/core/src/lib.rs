//! Quadcopter simulation with traditional (PFC) and extended (ePFC) potential
//! field controllers.
//!
//! Conventions used throughout the crate:
//! - Earth frame E is north-east-down; body frame B is forward-right-down.
//! - Altitude is `-p.z`. Thrust acts along `-b_z`.
//! - Euler angles are roll φ, pitch θ, yaw ψ with `R = Rz(ψ)·Ry(θ)·Rx(φ)`
//!   mapping body vectors into the earth frame.

pub mod diagnostics;
pub mod dynamics;
pub mod epfc;
pub mod frames;
pub mod io;
pub mod metrics;
pub mod pfc;
pub mod scenario;

pub use frames::Vec3;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gimbal lock: |cos(pitch)| = {cos_pitch:.3e} is below the guard")]
    GimbalLock { cos_pitch: f64 },

    #[error("non-finite value in simulation state at record {index}")]
    NumericAbort { index: usize },

    #[error("validation failed for `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),

    #[error("trajectory log is empty")]
    EmptyLog,
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}
