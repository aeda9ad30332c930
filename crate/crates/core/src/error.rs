use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("jones matrix is not unitary (deviation {0:.3e})")]
    NonUnitary(f64),

    #[error("mode occupation {count} exceeds truncation limit {n_max}")]
    Truncation { count: usize, n_max: usize },

    #[error("projection has zero probability")]
    ZeroProbability,

    #[error("state is not normalized (norm² = {0})")]
    Unnormalized(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("event streams use mismatched gate clocks")]
    ClockMismatch,

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error("negative signal: illuminated click probability {illuminated} below dark probability {dark}")]
    NegativeSignal { illuminated: f64, dark: f64 },

    #[error("filter specification unmeetable within {max_taps} taps: {reason}")]
    UnmeetableFilter { max_taps: usize, reason: String },

    #[error("configuration invalid: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<crate::config::ValidationIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
