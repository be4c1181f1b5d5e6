//! Cluster-robust (CR1) sandwich covariance.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::ols::gram_inverse;

/// `(X'X)^{-1} (sum_g X_g' e_g e_g' X_g) (X'X)^{-1}` scaled by
/// `G/(G-1) * (n-1)/(n-k)`.
///
/// `clusters` holds one label per row; labels need not be dense.
pub fn cluster_robust_vcov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    clusters: &[usize],
    names: &[String],
) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if residuals.len() != n || clusters.len() != n {
        return Err(Error::InvalidInput(
            "residuals/clusters do not match design rows".into(),
        ));
    }
    if n <= k {
        return Err(Error::InvalidInput(format!(
            "{n} observations for {k} regressors"
        )));
    }
    let bread = gram_inverse(x, names)?;
    let meat = cluster_meat(x, residuals, clusters)?;
    let g = meat.1 as f64;
    let scale = g / (g - 1.0) * (n as f64 - 1.0) / (n - k) as f64;
    let v = &bread * meat.0 * &bread * scale;
    Ok((&v + v.transpose()) * 0.5)
}

/// Sum of cluster score outer products and the cluster count.
pub(crate) fn cluster_meat(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    clusters: &[usize],
) -> Result<(DMatrix<f64>, usize)> {
    let k = x.ncols();
    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for (i, &c) in clusters.iter().enumerate() {
        let s = scores.entry(c).or_insert_with(|| DVector::zeros(k));
        let e = residuals[i];
        for j in 0..k {
            s[j] += x[(i, j)] * e;
        }
    }
    if scores.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "cluster-robust covariance needs at least 2 clusters, got {}",
            scores.len()
        )));
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    Ok((meat, scores.len()))
}
