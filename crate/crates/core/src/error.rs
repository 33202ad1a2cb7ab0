use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("rank deficient: numerical rank {rank}, required {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("numerical failure at iteration {iteration}: {context}")]
    NumericalFailure {
        iteration: usize,
        context: &'static str,
    },

    #[error("singular linear system: {0}")]
    SingularSystem(&'static str),

    #[error("locations outside the mesh: {0:?}")]
    OutsideMesh(Vec<usize>),

    #[error("too few draws: need at least {needed}, have {found}")]
    TooFewDraws { needed: usize, found: usize },

    #[error("input is constant; statistic is undefined")]
    ConstantInput,

    #[error("chain too short: length {len}, minimum {min}")]
    ChainTooShort { len: usize, min: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
