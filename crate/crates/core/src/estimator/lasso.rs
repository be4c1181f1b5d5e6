//! Rigorous Lasso for instrument selection.
//!
//! The solver minimises `||y - X b||^2 + lambda * sum_j psi_j |b_j|` by
//! cyclic coordinate descent. Selection standardises the candidate columns,
//! sets `lambda = 2 c sqrt(n) Phi^{-1}(1 - gamma / (2p))`, and iterates
//! heteroskedasticity-robust penalty loadings `psi_j` from post-Lasso
//! residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimator::ols::ols;

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub penalty_constant_c: f64,
    /// `None` uses `0.1 / ln(max(n, p))`.
    pub confidence_gamma: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
    /// Fixed penalty with unit loadings, bypassing the plug-in rule.
    pub lambda_override: Option<f64>,
    pub loading_iterations: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            penalty_constant_c: 1.1,
            confidence_gamma: None,
            max_iter: 10_000,
            tol: 1e-7,
            standardize: true,
            lambda_override: None,
            loading_iterations: 15,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_constant_c >= 1.0) {
            return Err(Error::InvalidInput(
                "lasso penalty constant c must be >= 1".into(),
            ));
        }
        if let Some(g) = self.confidence_gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidInput("lasso gamma must lie in (0, 1)".into()));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(
                "lasso tolerance must be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput(
                "lasso max_iter must be positive".into(),
            ));
        }
        if matches!(self.lambda_override, Some(l) if !(l >= 0.0)) {
            return Err(Error::InvalidInput(
                "lambda override must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn gamma(&self, n: usize, p: usize) -> f64 {
        self.confidence_gamma
            .unwrap_or_else(|| 0.1 / (n.max(p).max(3) as f64).ln())
    }
}

pub fn plugin_lambda(n: usize, p: usize, c: f64, gamma: f64) -> f64 {
    let normal = Normal::standard();
    2.0 * c * (n as f64).sqrt() * normal.inverse_cdf(1.0 - gamma / (2.0 * p as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

fn objective(resid: &[f64], coef: &[f64], lambda: f64, loadings: &[f64]) -> f64 {
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let pen: f64 = coef.iter().zip(loadings).map(|(b, l)| b.abs() * l).sum();
    rss + lambda * pen
}

/// Cyclic coordinate descent in column order. Converges when the largest
/// change in any fitted contribution `|x_j| * |delta b_j|` falls below `tol`.
pub fn coordinate_descent(
    y: &[f64],
    x: &DMatrix<f64>,
    lambda: f64,
    loadings: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<LassoFit> {
    let (n, p) = x.shape();
    if y.len() != n || loadings.len() != p {
        return Err(Error::InvalidInput(
            "lasso inputs have mismatched dimensions".into(),
        ));
    }
    let sq_norms: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut coef = vec![0.0; p];
    let mut resid = y.to_vec();
    let mut trace = vec![objective(&resid, &coef, lambda, loadings)];
    for iter in 1..=max_iter {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if sq_norms[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let old = coef[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() + sq_norms[j] * old;
            let new = soft_threshold(rho, lambda * loadings[j] / 2.0) / sq_norms[j];
            if new != old {
                let delta = new - old;
                for (r, a) in resid.iter_mut().zip(col.iter()) {
                    *r -= a * delta;
                }
                coef[j] = new;
                max_change = max_change.max(delta.abs() * sq_norms[j].sqrt());
            }
        }
        trace.push(objective(&resid, &coef, lambda, loadings));
        if max_change < tol {
            return Ok(LassoFit {
                coef,
                iterations: iter,
                objective_trace: trace,
            });
        }
    }
    Err(Error::LassoConvergence {
        iterations: max_iter,
        objective_trace: trace,
    })
}

/// Largest violation of the Lasso optimality conditions at `coef`.
pub fn kkt_violation(
    y: &[f64],
    x: &DMatrix<f64>,
    coef: &[f64],
    lambda: f64,
    loadings: &[f64],
) -> f64 {
    let b = DVector::from_column_slice(coef);
    let r = DVector::from_column_slice(y) - x * b;
    let mut worst: f64 = 0.0;
    for j in 0..x.ncols() {
        let grad = 2.0 * x.column(j).dot(&r);
        let pen = lambda * loadings[j];
        let v = if coef[j] == 0.0 {
            (grad.abs() - pen).max(0.0)
        } else {
            (grad - pen * coef[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSelection {
    /// Selected column indices, ascending.
    pub selected: Vec<usize>,
    /// Coefficients on the original column scale (zero when not selected).
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub loadings: Vec<f64>,
    /// Columns with no variation; never eligible.
    pub constant_columns: Vec<usize>,
    pub iterations: usize,
    pub kkt_max: f64,
}

impl LassoSelection {
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn require_nonempty(&self) -> Result<&[usize]> {
        if self.selected.is_empty() {
            Err(Error::EmptySelection)
        } else {
            Ok(&self.selected)
        }
    }
}

/// Plug-in Lasso selection of the columns of `x` predicting `y`.
pub fn lasso_select(y: &[f64], x: &DMatrix<f64>, cfg: &LassoConfig) -> Result<LassoSelection> {
    cfg.validate()?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidInput(
            "lasso response length differs from design rows".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidInput(
            "lasso needs at least 2 observations".into(),
        ));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("lasso inputs must be finite".into()));
    }

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut scale = vec![1.0; p];
    let mut constant_columns = Vec::new();
    let mut xs = x.clone();
    for j in 0..p {
        let mut col = xs.column_mut(j);
        let m = col.mean();
        col.add_scalar_mut(-m);
        let sd = (col.norm_squared() / n as f64).sqrt();
        let magnitude = x.column(j).amax().max(1.0);
        if !(sd > 1e-12 * magnitude) {
            constant_columns.push(j);
            col.fill(0.0);
            scale[j] = 0.0;
        } else if cfg.standardize {
            col /= sd;
            scale[j] = sd;
        }
    }
    let active_p = p - constant_columns.len();

    let finish = |fit: LassoFit, lambda: f64, loadings: Vec<f64>| {
        let kkt_max = kkt_violation(&yc, &xs, &fit.coef, lambda, &loadings);
        let mut coef = vec![0.0; p];
        let mut selected = Vec::new();
        for j in 0..p {
            if fit.coef[j] != 0.0 {
                selected.push(j);
                coef[j] = if cfg.standardize {
                    fit.coef[j] / scale[j]
                } else {
                    fit.coef[j]
                };
            }
        }
        LassoSelection {
            selected,
            coef,
            lambda,
            loadings,
            constant_columns: constant_columns.clone(),
            iterations: fit.iterations,
            kkt_max,
        }
    };

    if let Some(lambda) = cfg.lambda_override {
        let loadings = vec![1.0; p];
        let fit = coordinate_descent(&yc, &xs, lambda, &loadings, cfg.max_iter, cfg.tol)?;
        return Ok(finish(fit, lambda, loadings));
    }
    if active_p == 0 {
        return Ok(finish(
            LassoFit {
                coef: vec![0.0; p],
                iterations: 0,
                objective_trace: vec![],
            },
            0.0,
            vec![0.0; p],
        ));
    }

    let gamma = cfg.gamma(n, active_p);
    let lambda = plugin_lambda(n, active_p, cfg.penalty_constant_c, gamma);

    let robust_loadings = |resid: &[f64]| -> Vec<f64> {
        (0..p)
            .map(|j| {
                let col = xs.column(j);
                let s: f64 = col.iter().zip(resid).map(|(a, e)| a * a * e * e).sum();
                (s / n as f64).sqrt()
            })
            .collect()
    };

    let mut loadings = robust_loadings(&yc);
    let mut fit = coordinate_descent(&yc, &xs, lambda, &loadings, cfg.max_iter, cfg.tol)?;
    for _ in 0..cfg.loading_iterations {
        let resid = post_lasso_residuals(&yc, &xs, &fit.coef)?;
        let next = robust_loadings(&resid);
        let change = next
            .iter()
            .zip(&loadings)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        loadings = next;
        fit = coordinate_descent(&yc, &xs, lambda, &loadings, cfg.max_iter, cfg.tol)?;
        if change < 1e-6 {
            break;
        }
    }
    Ok(finish(fit, lambda, loadings))
}

fn post_lasso_residuals(y: &[f64], x: &DMatrix<f64>, coef: &[f64]) -> Result<Vec<f64>> {
    let support: Vec<usize> = (0..coef.len()).filter(|&j| coef[j] != 0.0).collect();
    if support.is_empty() || support.len() >= y.len() {
        return Ok(y.to_vec());
    }
    let xs = x.select_columns(&support);
    let yv = DVector::from_column_slice(y);
    match ols(&yv, &xs, &[]) {
        Ok(fit) => Ok(fit.residuals.iter().copied().collect()),
        // Collinear support: fall back to the penalised residuals.
        Err(Error::RankDeficient(_)) => {
            let b = DVector::from_column_slice(coef);
            Ok((yv - x * b).iter().copied().collect())
        }
        Err(e) => Err(e),
    }
}
