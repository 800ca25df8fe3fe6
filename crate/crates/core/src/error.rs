use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid grid axis: {0}")]
    InvalidAxis(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid distribution parameters: {0}")]
    Distribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input cell {0} is not admissible for the observed state")]
    InadmissibleInput(usize),

    #[error("forecast is stale: requested step {requested}, forecast holds {available}")]
    StaleForecast { requested: usize, available: usize },

    #[error("history too short: need {needed} samples, have {have}")]
    ShortHistory { needed: usize, have: usize },

    #[error("no leading-vehicle gap: s = {0} m")]
    NonPositiveGap(f64),

    #[error("solver diverged: {0}")]
    Solver(String),

    #[error("value table format: {0}")]
    Format(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
