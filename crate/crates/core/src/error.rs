use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("non-positive price {value} for {currency} at {timestamp}")]
    Domain {
        currency: String,
        timestamp: i64,
        value: f64,
    },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("degenerate spread {0}: formation standard deviation is zero")]
    DegenerateSpread(String),

    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("screening failure: {0}")]
    Screening(String),

    #[error("infeasible weight: {0}")]
    InfeasibleWeight(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(pos) => Error::Parse {
                line: pos.line() as usize,
                message: e.to_string(),
            },
            None => Error::Io(e.to_string()),
        }
    }
}
