//! Least-squares building blocks on `nalgebra` matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot size below which a column counts as linearly dependent
/// on the columns before it.
pub const RANK_TOL: f64 = 1e-10;

/// Column-major design matrix from named columns.
pub fn matrix_from_columns(columns: &[&[f64]], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, columns.len());
    for (j, col) in columns.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        m.column_mut(j).copy_from_slice(col);
    }
    m
}

/// Indices of columns that are (numerically) linear combinations of the
/// columns preceding them, found by a Cholesky sweep over `X'X` in column
/// order.
pub fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let g = x.transpose() * x;
    let k = g.ncols();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    let mut dependent = Vec::new();
    for j in 0..k {
        let mut d = g[(j, j)];
        for &m in &kept {
            d -= l[(j, m)] * l[(j, m)];
        }
        if !(d > RANK_TOL * g[(j, j)].max(f64::MIN_POSITIVE)) || g[(j, j)] == 0.0 {
            dependent.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..k {
            let mut s = g[(i, j)];
            for &m in &kept {
                s -= l[(i, m)] * l[(j, m)];
            }
            l[(i, j)] = s / djj;
        }
        kept.push(j);
    }
    dependent
}

/// `(X'X)^{-1}`, or `RankDeficient` naming the dependent columns.
pub fn gram_inverse(x: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let dependent = dependent_columns(x);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(
            dependent.iter().map(|&j| column_name(names, j)).collect(),
        ));
    }
    let g = x.transpose() * x;
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(vec!["X'X is not positive definite".to_string()]))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn column_name(names: &[String], j: usize) -> String {
    names.get(j).cloned().unwrap_or_else(|| format!("col{j}"))
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
}

impl OlsFit {
    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>, names: &[String]) -> Result<OlsFit> {
    if y.len() != x.nrows() {
        return Err(Error::InvalidInput(format!(
            "response has {} rows, design has {}",
            y.len(),
            x.nrows()
        )));
    }
    if x.nrows() <= x.ncols() {
        return Err(Error::InvalidInput(format!(
            "{} observations for {} regressors",
            x.nrows(),
            x.ncols()
        )));
    }
    let xtx_inv = gram_inverse(x, names)?;
    let beta = &xtx_inv * (x.transpose() * y);
    let fitted = x * &beta;
    let residuals = y - &fitted;
    Ok(OlsFit {
        beta,
        fitted,
        residuals,
        xtx_inv,
    })
}

/// Residuals of every column of `targets` after projection on `basis`.
/// An empty basis returns the targets unchanged.
pub fn residualize(
    targets: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    names: &[String],
) -> Result<DMatrix<f64>> {
    if basis.ncols() == 0 {
        return Ok(targets.clone());
    }
    let inv = gram_inverse(basis, names)?;
    let coef = inv * (basis.transpose() * targets);
    Ok(targets - basis * coef)
}

/// Classical `s^2 (X'X)^{-1}` covariance.
pub fn classical_vcov(fit: &OlsFit, n: usize, k: usize) -> DMatrix<f64> {
    let s2 = fit.rss() / (n - k) as f64;
    &fit.xtx_inv * s2
}
