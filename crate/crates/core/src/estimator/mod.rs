//! Instrument selection, two-stage least squares and inference.

pub mod balance;
pub mod iv;
pub mod lasso;
pub mod ols;
pub mod report;
pub mod vcov;

pub use balance::{balance_test, gdp_growth, pearson_test, BalanceRow, Correlation};
pub use iv::{
    build_design, estimate, iv_all, iv_lasso, naive_fe, two_sls, Coefficient, ControlsConfig,
    EstimatorKind, FirstStageResult, IvData, IvEstimate, PanelDesign, WeatherControls,
};
pub use lasso::{lasso_select, soft_threshold, LassoConfig, LassoSelection};
pub use report::EstimationReport;
pub use vcov::cluster_robust_vcov;

/// Avoided under-5 deaths: `(theta_so2 * d_so2 + theta_pm * d_pm) / 1000 * population`.
pub fn lives_saved(
    theta_so2: f64,
    theta_pm: f64,
    delta_so2: f64,
    delta_pm: f64,
    population_u5: f64,
) -> f64 {
    (theta_so2 * delta_so2 + theta_pm * delta_pm) / 1000.0 * population_u5
}
