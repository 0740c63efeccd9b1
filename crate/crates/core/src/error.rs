use thiserror::Error;

/// Errors raised by the detector and spectrometer models.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a model.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("tuning error: no phase-matched root in [{lo_nm:.3}, {hi_nm:.3}] nm ({context})")]
    Tuning {
        lo_nm: f64,
        hi_nm: f64,
        context: String,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("design error: {0}")]
    Design(String),

    #[error("unrecoverable band(s): {0}")]
    UnrecoverableBand(String),

    #[error("background estimation error: {0}")]
    Estimation(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
