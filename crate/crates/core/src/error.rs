use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("law `{law}` does not support {what}")]
    UnsupportedLaw { law: String, what: &'static str },

    #[error("log-Laplace estimate diverged at beta = {beta}")]
    Divergence { beta: f64 },

    #[error("rejection loop exceeded {max_restarts} restarts")]
    RejectionBudget { max_restarts: usize },

    #[error("population exceeded {max_particles} particles at generation {generation}")]
    PopulationExplosion { max_particles: usize, generation: usize },

    #[error("population is extinct")]
    Extinct,

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("enumeration too large: {0}")]
    SizeGuard(String),

    #[error("too few survivors: {found} < {required}")]
    TooFewSurvivors { found: usize, required: usize },

    #[error("no path landed in the target window")]
    ZeroHits,

    #[error("schedule inconsistent with regime: {0}")]
    Schedule(String),

    #[error("conditioning mismatch: series is {series}, row is {row}")]
    ConditioningMismatch { series: String, row: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
