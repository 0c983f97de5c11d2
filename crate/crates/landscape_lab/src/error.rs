use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("time {time} is not aligned with the grid (t0={t0}, dt={dt})")]
    Alignment { time: f64, t0: f64, dt: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("initial data has empty max-plus support")]
    EmptySupport,
    #[error("window too small: {0}")]
    WindowTooSmall(String),
    #[error("not t-finitary: {0}")]
    NotFinitary(String),
    #[error("empty sample: {0}")]
    EmptySample(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Parse(e.to_string())
    }
}
