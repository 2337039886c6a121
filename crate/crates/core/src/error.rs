use thiserror::Error;

pub type Result<T, E = KrfError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrfError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {t} outside the background validity range [0, {horizon}]")]
    HorizonExceeded { t: f64, horizon: f64 },

    #[error("background metric degenerate at t = {t}: point {point} has eigenvalue {eigenvalue}")]
    GeometryDegenerate { t: f64, point: usize, eigenvalue: f64 },

    #[error("metric degenerate at point {point}: eigenvalue {eigenvalue}")]
    DegenerateMetric { point: usize, eigenvalue: f64 },

    #[error("Kahler positivity lost at point {point}: volume ratio {value}")]
    PositivityLost { point: usize, value: f64 },

    #[error("ill-conditioned metric at point {point}: condition number {condition}")]
    IllConditionedMetric { point: usize, condition: f64 },

    #[error("cone violation: {0}")]
    ConeViolation(String),

    #[error("hypothesis violation: {0}")]
    HypothesisViolation(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for KrfError {
    fn from(err: std::io::Error) -> Self {
        KrfError::Io(err.to_string())
    }
}
