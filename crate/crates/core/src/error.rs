use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid dimensions {rows}x{cols}: need at least two cells")]
    InvalidDimension { rows: usize, cols: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("self-loop on region {0:?}")]
    SelfLoop(String),

    #[error("adjacency graph has {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<String>> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("infeasible initial state at region {region}, year {year}: {reason}")]
    Infeasible {
        region: usize,
        year: usize,
        reason: String,
    },

    #[error("survey needs at least two rows with distinct spans to identify the trend, got {0}")]
    UnidentifiedTrend(usize),

    #[error("empty draw set for {0}")]
    EmptyDraws(String),

    #[error("simulation failed: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
