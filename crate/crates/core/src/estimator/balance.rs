//! Correlation of instruments with economic growth.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exposure::InstrumentMatrix;
use crate::panel::SocioRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided p-value from
/// `t = r sqrt((n-2)/(1-r^2))` on `n - 2` degrees of freedom.
pub fn pearson_test(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(
            "correlation series differ in length".into(),
        ));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "correlation needs at least 3 pairs, got {n}"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::DegenerateCorrelation(
            "a series has zero variance".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    let (t, p) = if denom <= 0.0 {
        (f64::INFINITY.copysign(r), 0.0)
    } else {
        let t = r * (df / denom).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Ok(Correlation {
        r,
        t_stat: t,
        p_value: p,
        n,
    })
}

/// Annual growth of total (primary + secondary) GDP per capita as a log
/// difference from the previous year; years without a predecessor or with
/// non-positive GDP are skipped.
pub fn gdp_growth(rows: &[SocioRecord]) -> BTreeMap<(String, i32), f64> {
    let level: BTreeMap<(&str, i32), f64> = rows
        .iter()
        .map(|r| {
            (
                (r.county_id.as_str(), r.year),
                r.prim_gdp_pc_cny + r.sec_gdp_pc_cny,
            )
        })
        .collect();
    level
        .iter()
        .filter_map(|(&(c, y), &g)| {
            let prev = *level.get(&(c, y - 1))?;
            (g > 0.0 && prev > 0.0).then(|| ((c.to_string(), y), g.ln() - prev.ln()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub instrument: String,
    pub n: usize,
    /// `None` when the instrument has no variation on the paired sample.
    pub result: Option<Correlation>,
}

/// One correlation per instrument column against growth, pairing rows on
/// `(county_id, year)`.
pub fn balance_test(
    instruments: &InstrumentMatrix,
    growth: &BTreeMap<(String, i32), f64>,
) -> Result<Vec<BalanceRow>> {
    let paired: Vec<(usize, f64)> = instruments
        .keys
        .iter()
        .enumerate()
        .filter_map(|(i, k)| growth.get(k).map(|&g| (i, g)))
        .collect();
    if paired.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "balance test needs at least 3 paired rows, got {}",
            paired.len()
        )));
    }
    let g: Vec<f64> = paired.iter().map(|p| p.1).collect();
    (0..instruments.n_cols())
        .map(|j| {
            let x: Vec<f64> = paired.iter().map(|&(i, _)| instruments.get(i, j)).collect();
            let result = match pearson_test(&x, &g) {
                Ok(c) => Some(c),
                Err(Error::DegenerateCorrelation(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(BalanceRow {
                instrument: instruments.columns[j].clone(),
                n: paired.len(),
                result,
            })
        })
        .collect()
}
