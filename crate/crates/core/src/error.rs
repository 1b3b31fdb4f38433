use thiserror::Error;

/// Every failure the toolkit can report. The variants double as exit-code
/// categories for the command line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("weight degeneracy at t={t}: all particles have zero weight")]
    Degeneracy { t: usize },

    #[error("parameter store: {0}")]
    Store(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short category tag, also used to pick the process exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numerical(_) => "numerical",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::Degeneracy { .. } => "degeneracy",
            Error::Store(_) => "store",
            Error::Metric(_) => "metric",
            Error::Io(_) | Error::Csv(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dimension(_) | Error::Contract(_) => 3,
            Error::Numerical(_) | Error::Degeneracy { .. } => 4,
            Error::Store(_) | Error::Metric(_) => 5,
            Error::Io(_) | Error::Csv(_) => 6,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
pub(crate) use dim_err;
