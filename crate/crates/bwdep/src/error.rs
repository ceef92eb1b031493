use thiserror::Error;

/// Errors produced by this crate.
///
/// The variants are grouped by how the command line maps them to exit codes:
/// input/config problems (exit 2), numerical or model failures (exit 3), and
/// non-convergence with partial output (exit 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("tied spectrum: {0}")]
    TiedSpectrum(String),

    #[error("degenerate normalization: {0}")]
    Degenerate(String),

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code for the CLI: 0 success, 2 input error, 3 numerical/model
    /// error, 4 non-convergence with partial output.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            Error::Numerical(_)
            | Error::Singular(_)
            | Error::TiedSpectrum(_)
            | Error::Degenerate(_) => 3,
            Error::NonConvergence(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
