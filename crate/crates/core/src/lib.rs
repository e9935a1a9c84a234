pub mod control;
pub mod error;
pub mod experiments;
pub mod game;
pub mod io;
pub mod ode;
pub mod nonlinear;
pub mod quasilinear;
pub mod replicator;

pub use error::{Error, Result};
