use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("routing distribution inconsistent with state: {0}")]
    InconsistentRouting(String),

    #[error("Coxian parameters are not normalized to mean one (mean = {mean})")]
    Unnormalized { mean: f64 },

    #[error("heavy-traffic parameters (alpha, beta) are required for {0}")]
    MissingHeavyTraffic(&'static str),

    #[error("state space of {required} states exceeds the cap of {cap}; raise the cap to at least {required}")]
    StateCapExceeded { required: u128, cap: u128 },

    #[error("power-of-d sample size {d} is outside 1..={n}")]
    SampleSizeOutOfRange { d: usize, n: usize },

    #[error("per-server simulation supports at most {cap} servers, got {n}")]
    TooManyServers { n: usize, cap: usize },

    #[error("stationary solve failed: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
