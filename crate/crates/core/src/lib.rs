//! Coal-plant closure exposures as instruments for air pollution, with
//! post-Lasso two-stage least squares under two-way fixed effects.

pub mod error;
pub mod estimator;
pub mod exposure;
pub mod geo;
pub mod io;
pub mod met;
pub mod numeric;
pub mod panel;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
