use thiserror::Error;

/// Errors raised by the library. Report-valued checks (bounds scans, energy
/// margins, data-set membership) never use this type; they return a report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("time {requested} is not on the time grid (nearest grid times: {below}, {above})")]
    OffGrid { requested: f64, below: f64, above: f64 },

    #[error("continuation mismatch at T={time}: state discrepancy {discrepancy:e} exceeds {tolerance:e}")]
    Continuation {
        time: f64,
        discrepancy: f64,
        tolerance: f64,
    },

    #[error("energy would increase across the splice at T={time}: E2(0-)={incoming} > E1(T-)={outgoing}")]
    EnergyIncrease { time: f64, incoming: f64, outgoing: f64 },

    #[error("energy signal is not nonincreasing at sample {index}")]
    NotMonotone { index: usize },

    #[error("empty trajectory set: {0}")]
    Empty(String),

    #[error("vacuum: {cells} of {total} cells below the vacuum threshold")]
    Vacuum { cells: usize, total: usize },

    #[error("CFL violation at step {step}: dt={dt:e} exceeds limit {limit:e}")]
    Cfl { step: usize, dt: f64, limit: f64 },

    #[error("negative density {value:e} in cell {cell} after step {step}")]
    Positivity { step: usize, cell: usize, value: f64 },

    #[error("candidate generator failed: {0}")]
    Generator(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
