use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigenvalue iteration failed to converge for a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("state norm exceeded bound {bound:e} at t = {time}")]
    StateBound { time: f64, bound: f64 },

    #[error("Riccati flow blew up in regime {regime} at t = {time} (finite escape)")]
    RiccatiBlowUp { regime: usize, time: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid game definition: {0}")]
    InvalidSpec(String),

    #[error("negative transition rate {rate} from regime {from} to {to}")]
    NegativeRate { from: usize, to: usize, rate: f64 },

    #[error("accuracy failure: {0}")]
    Accuracy(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("input error: {0}")]
    Input(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenFailure(_)
                | Error::NonFiniteState { .. }
                | Error::StateBound { .. }
                | Error::RiccatiBlowUp { .. }
                | Error::Accuracy(_)
                | Error::Singular(_)
        )
    }
}
