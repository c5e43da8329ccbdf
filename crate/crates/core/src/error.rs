use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing configuration key `{0}`")]
    MissingKey(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("index {index} is not an interior node of a grid with nodes {lo}..={hi}")]
    IndexOutOfRange { index: i64, lo: i64, hi: i64 },

    #[error("query ({what} = {value}) outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("non-finite value produced at level {level}, step {step}")]
    Overflow { level: usize, step: u64 },

    #[error("no threshold crossing is bracketed by the last two time slices")]
    NoCrossing,

    #[error("degenerate rescale interval at level {level}: {reason}")]
    DegenerateInterval { level: usize, reason: String },

    #[error("scheduling error: {0}")]
    Schedule(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("phase unwrap failed between samples {0} and {1}")]
    PhaseUnwrap(usize, usize),

    #[error("convergence study: {0}")]
    Convergence(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
