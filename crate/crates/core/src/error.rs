use thiserror::Error;

/// Errors raised by the simulation and estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("singular relative state: range {range} m is at or below the {floor} m floor")]
    Singularity { range: f64, floor: f64 },
    #[error("invalid calibration: {0}")]
    Calibration(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
