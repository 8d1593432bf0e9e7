use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("hill climber exceeded {steps} steps from genotype {start}")]
    Divergence { start: u32, steps: u64 },

    #[error("inconsistent input: {0}")]
    Consistency(String),

    #[error("global optimum is not unique: LONNs {0:?} share the maximal fitness")]
    GlobalOptimumTie(Vec<u32>),

    #[error("malformed document at `{path}`: {msg}")]
    Parse { path: String, msg: String },

    #[error("zero variance in sample")]
    ZeroVariance,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Parse { .. } => 2,
            Error::Capacity(_) => 3,
            Error::Convergence(_) | Error::Divergence { .. } => 4,
            _ => 1,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
