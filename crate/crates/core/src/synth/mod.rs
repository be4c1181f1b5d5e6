//! Synthetic data generation and Monte Carlo validation.

pub mod dgp;
pub mod monte_carlo;

pub use dgp::{generate, DgpConfig, SynthBundle, TruthRow, RNG_NAME};
pub use monte_carlo::{monte_carlo, run_replication, McConfig, McResult, Summary};
