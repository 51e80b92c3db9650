use thiserror::Error;

use crate::spectral::Mode;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} is not supported, expected 1, 2 or 3")]
    Dimension(usize),
    #[error("cutoff N={cutoff} needs {modes} modes, over the budget of {budget}")]
    ModeBudget {
        cutoff: usize,
        modes: usize,
        budget: usize,
    },
    #[error("field and interaction live on different lattices")]
    LatticeMismatch,
    #[error("mode set is not symmetric under k -> -k")]
    AsymmetricModes,
    #[error("tail bound {bound:.3e} exceeds tolerance {tol:.3e} at K_sum={k_sum} (value {value})")]
    Tail {
        value: f64,
        bound: f64,
        tol: f64,
        k_sum: usize,
    },
    #[error("{0} is only defined in d=3")]
    NeedsThreeDims(&'static str),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("quadrature did not converge: partial value {value} with error {error:.3e}")]
    Quadrature { value: f64, error: f64 },
    #[error("acceptance rate {rate:.3} below floor {floor:.3}; a MALA sampler is the better choice here")]
    LowAcceptance { rate: f64, floor: f64 },
    #[error("non-finite energy encountered")]
    NonFinite,
    #[error("field blew up at t={time}")]
    BlowUp { time: f64 },
    #[error("mode {0:?} is not in the basis")]
    ModeNotInBasis(Mode),
    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("state does not commute with the number operator")]
    NotNumberConserving,
    #[error("order k={k} needs occupation cap {need}, basis has {have}")]
    OrderTooHigh { k: usize, need: usize, have: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
