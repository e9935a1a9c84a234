use crate::ode::DenseSolution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The integrator gave up. `partial` holds every step accepted before the failure.
    #[error("integration failed at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: String,
        partial: Option<Box<DenseSolution>>,
    },

    #[error("shooting sensitivity matrix is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("Lie bracket [F, G] does not vanish: norm {norm:.3e} at t = {t}")]
    BracketNonvanishing { norm: f64, t: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("population share {index} dropped to {value:.3e} at t = {t}")]
    SimplexViolation { index: usize, value: f64, t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
