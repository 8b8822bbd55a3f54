//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by structure validation, solvers and the continuation loop.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Matrix shapes or parity constraints are violated.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A structural invariant does not hold (symmetry, feedthrough pairing,
    /// symplectic property, rank, quantum positivity).
    #[error("structure error: {0}")]
    Structure(String),

    /// A matrix required to be Hurwitz is not.
    #[error("stability error: spectral abscissa {abscissa:.6e} is not negative")]
    NotHurwitz { abscissa: f64 },

    /// The effective time horizon exceeds the admissible maximum for the
    /// current closed-loop matrix.
    #[error("stability error: horizon {t:.6e} exceeds the admissible maximum {t_max:.6e}")]
    HorizonTooLarge { t: f64, t_max: f64 },

    /// A dense linear solve or factorization broke down.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A documented precondition of an operation failed.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// An iterative solve hit its iteration cap before reaching tolerance.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// The continuation step could not be completed (near-singular restricted
    /// Hessian or corrector failure); the driver reduces the step in response.
    #[error("continuation error: {0}")]
    Continuation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Dimension(msg()))
    }
}
