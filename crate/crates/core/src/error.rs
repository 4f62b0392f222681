use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("non-finite value at frame {frame}, element {index}")]
    NonFinite { frame: usize, index: usize },

    #[error("zero-norm descriptor at frame(s) {frames:?}")]
    ZeroNorm { frames: Vec<usize> },

    #[error("degenerate group {group}: soft size {size:e} below guard{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    DegenerateGroup {
        group: usize,
        size: f64,
        iteration: Option<usize>,
    },

    #[error("infeasible cap: {cap} x {k} groups cannot hold {n} frames")]
    InfeasibleCap { cap: usize, k: usize, n: usize },

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("workload of {tokens} tokens exceeds the guard of {guard}; use fewer tokens per frame")]
    WorkloadTooLarge { tokens: usize, guard: usize },

    #[error("plan violation in subscene {subscene}: {detail}")]
    PlanViolation { subscene: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 configuration, 3 data/format, 4 infeasible instance.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. }
            | Error::NonFinite { .. }
            | Error::ZeroNorm { .. }
            | Error::DegenerateGroup { .. }
            | Error::PlanViolation { .. }
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::InfeasibleCap { .. } | Error::TooLarge(_) | Error::WorkloadTooLarge { .. } => 4,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }
}
