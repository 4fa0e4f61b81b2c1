//! Biased adaptive stochastic approximation.
//!
//! The recursion `theta_{n+1} = theta_n - gamma_{n+1} A_n H(theta_n, X_{n+1})` driven by
//! biased gradient oracles and diagonal adaptive preconditioners, plus the tooling to
//! measure convergence rates and bias floors empirically.

pub mod analysis;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod oracles;
pub mod preconditioners;
pub mod problems;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
