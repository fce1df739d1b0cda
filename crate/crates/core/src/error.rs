use thiserror::Error;

/// Errors produced by the sampling engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at index {index}: expected {expected}, got {found}")]
    ShapeMismatch {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("mode {mode} out of range 1..={max}")]
    ModeOutOfRange { mode: usize, max: usize },

    #[error("infeasible DDIM step at t={t}: sigma^2 = {sigma_sq} exceeds 1 - alpha_bar_prev = {limit}")]
    InfeasibleStep { t: usize, sigma_sq: f64, limit: f64 },

    #[error("{0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
