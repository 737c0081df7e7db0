use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("maturities must be strictly increasing and positive (at {maturity})")]
    NonMonotoneMaturities { maturity: f64 },

    #[error("bootstrap step is numerically singular at pillar T={pillar}")]
    SingularBootstrap { pillar: f64 },

    #[error("time {t} outside curve domain [0, {max}]")]
    OutOfDomain { t: f64, max: f64 },

    #[error("no forward curve for tenor {tenor}")]
    MissingTenor { tenor: f64 },

    #[error("time ordering violated: {0}")]
    Ordering(String),

    #[error("shift calibration drives the intensity negative at pillar T={pillar} (psi={psi})")]
    NegativeShift { pillar: f64, psi: f64 },

    #[error("correlation matrix invalid: {0}")]
    Correlation(String),

    #[error("time grid does not contain required node t={t}")]
    MissingGridNode { t: f64 },

    #[error("missing fixing for reset at t={reset} (tenor {tenor})")]
    MissingFixing { reset: f64, tenor: f64 },

    #[error("price {price} outside arbitrage bounds [{lower}, {upper}]")]
    PriceOutOfBounds { price: f64, lower: f64, upper: f64 },

    #[error("numerical failure in {module}: {detail}")]
    Numerical {
        module: &'static str,
        detail: String,
    },

    #[error("i/o: {0}")]
    Io(String),
}

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
