//! Post-Lasso two-stage least squares with cluster-robust inference.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimator::lasso::{lasso_select, LassoConfig};
use crate::estimator::ols::{classical_vcov, dependent_columns, gram_inverse, ols, residualize};
use crate::estimator::vcov::cluster_robust_vcov;
use crate::exposure::InstrumentMatrix;
use crate::panel::{
    demean, dense_labels, model_sample, CountyYearRow, FixedEffectsPlan, GDP_ESTIMATION_SCALE,
};
use crate::raster::Pollutant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NaiveFe,
    IvAll,
    IvLasso,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::NaiveFe,
        EstimatorKind::IvAll,
        EstimatorKind::IvLasso,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::NaiveFe => "naive_fe",
            EstimatorKind::IvAll => "iv_all",
            EstimatorKind::IvLasso => "iv_lasso",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator `{s}`")))
    }
}

/// Regression inputs after any fixed-effect absorption. No intercept is
/// added; include a constant column in `controls` when one is needed.
#[derive(Debug, Clone)]
pub struct IvData {
    pub y: DVector<f64>,
    pub y_name: String,
    pub endog: DMatrix<f64>,
    pub endog_names: Vec<String>,
    pub instruments: DMatrix<f64>,
    pub instrument_names: Vec<String>,
    pub controls: DMatrix<f64>,
    pub control_names: Vec<String>,
    pub clusters: Vec<usize>,
}

impl IvData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_clusters(&self) -> usize {
        let mut c = self.clusters.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let dims_ok = self.endog.nrows() == n
            && self.instruments.nrows() == n
            && self.controls.nrows() == n
            && self.clusters.len() == n
            && self.endog.ncols() == self.endog_names.len()
            && self.instruments.ncols() == self.instrument_names.len()
            && self.controls.ncols() == self.control_names.len();
        if !dims_ok {
            return Err(Error::InvalidInput(
                "regression blocks have inconsistent dimensions".into(),
            ));
        }
        if self.endog.ncols() == 0 {
            return Err(Error::InvalidInput("no endogenous regressors".into()));
        }
        let finite = self
            .y
            .iter()
            .chain(self.endog.iter())
            .chain(self.instruments.iter())
            .chain(self.controls.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(
                "regression inputs must be finite".into(),
            ));
        }
        Ok(())
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows().max(b.nrows());
    let mut m = DMatrix::zeros(n, a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FStatKind {
    /// Cluster-robust Wald statistic divided by the instrument count.
    ClusterWald,
    /// Homoskedastic F; used when instruments outnumber clusters.
    Classical,
}

impl FStatKind {
    pub fn name(&self) -> &'static str {
        match self {
            FStatKind::ClusterWald => "cluster_wald",
            FStatKind::Classical => "classical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageResult {
    pub endogenous_name: String,
    /// Instruments entering this first stage, in candidate order.
    pub selected_instruments: Vec<String>,
    /// Instruments chosen by Lasso for this endogenous variable alone.
    pub own_selection: Vec<String>,
    pub coefficients: BTreeMap<String, f64>,
    pub std_errors: BTreeMap<String, f64>,
    pub f_stat_excluded: f64,
    pub f_stat_kind: FStatKind,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Coefficient {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

#[derive(Debug, Clone)]
pub struct IvEstimate {
    pub estimator: EstimatorKind,
    pub coefficients: Vec<Coefficient>,
    pub first_stage: Vec<FirstStageResult>,
    pub vcov: DMatrix<f64>,
    pub n: usize,
    pub n_clusters: usize,
    pub n_candidates: usize,
}

impl IvEstimate {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Inference uses a t distribution with `G - 1` degrees of freedom.
fn coefficients(
    names: &[String],
    beta: &DVector<f64>,
    vcov: &DMatrix<f64>,
    g: usize,
) -> Result<Vec<Coefficient>> {
    let df = (g.max(2) - 1) as f64;
    let t_dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let crit = t_dist.inverse_cdf(0.975);
    Ok(names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = vcov[(j, j)].max(0.0).sqrt();
            let t = beta[j] / se;
            Coefficient {
                name: name.clone(),
                estimate: beta[j],
                std_error: se,
                t_stat: t,
                p_value: 2.0 * (1.0 - t_dist.cdf(t.abs())),
                ci_low: beta[j] - crit * se,
                ci_high: beta[j] + crit * se,
            }
        })
        .collect())
}

fn total_ss(v: &DVector<f64>) -> f64 {
    let m = v.mean();
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// First stage for endogenous column `j` on `selected` instruments plus
/// controls. Returns the result and the fitted values.
fn first_stage(
    data: &IvData,
    j: usize,
    selected: &[usize],
    own_selection: Vec<String>,
) -> Result<(FirstStageResult, DVector<f64>)> {
    let n = data.n();
    let q = selected.len();
    let z = hcat(&data.instruments.select_columns(selected), &data.controls);
    let names: Vec<String> = selected
        .iter()
        .map(|&i| data.instrument_names[i].clone())
        .chain(data.control_names.iter().cloned())
        .collect();
    let x = data.endog.column(j).into_owned();
    let fit = ols(&x, &z, &names)?;
    let k = z.ncols();
    let g = data.n_clusters();

    let classical_f = || -> Result<f64> {
        let rss_u = fit.rss();
        let rss_r = if data.controls.ncols() == 0 {
            x.norm_squared()
        } else {
            ols(&x, &data.controls, &data.control_names)?.rss()
        };
        Ok(((rss_r - rss_u) / q as f64) / (rss_u / (n - k) as f64))
    };

    let v = cluster_robust_vcov(&z, &fit.residuals, &data.clusters, &names)?;
    let (f_stat, kind) = if q < g {
        let vq = v.view((0, 0), (q, q)).into_owned();
        let bq = fit.beta.rows(0, q).into_owned();
        match vq.try_inverse() {
            Some(inv) => (
                (bq.transpose() * inv * &bq)[(0, 0)] / q as f64,
                FStatKind::ClusterWald,
            ),
            None => (classical_f()?, FStatKind::Classical),
        }
    } else {
        (classical_f()?, FStatKind::Classical)
    };

    let tss = total_ss(&x);
    let r2 = if tss > 0.0 {
        1.0 - fit.rss() / tss
    } else {
        0.0
    };
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n - k) as f64;
    let coefficients = names
        .iter()
        .take(q)
        .zip(fit.beta.iter())
        .map(|(n, b)| (n.clone(), *b))
        .collect();
    let std_errors = names
        .iter()
        .take(q)
        .enumerate()
        .map(|(i, n)| (n.clone(), v[(i, i)].max(0.0).sqrt()))
        .collect();
    Ok((
        FirstStageResult {
            endogenous_name: data.endog_names[j].clone(),
            selected_instruments: names[..q].to_vec(),
            own_selection,
            coefficients,
            std_errors,
            f_stat_excluded: f_stat,
            f_stat_kind: kind,
            r2,
            adj_r2,
            n,
        },
        fit.fitted,
    ))
}

/// 2SLS of `y` on endogenous regressors and controls using the instrument
/// columns in `selected` (plus controls) as excluded instruments.
pub fn two_sls(
    data: &IvData,
    selected: &[usize],
    own_selections: Vec<Vec<String>>,
    kind: EstimatorKind,
) -> Result<IvEstimate> {
    data.validate()?;
    let m = data.endog.ncols();
    if selected.len() < m {
        return Err(Error::UnderIdentified(format!(
            "{} excluded instrument(s) for {} endogenous regressor(s)",
            selected.len(),
            m
        )));
    }
    let z = hcat(&data.instruments.select_columns(selected), &data.controls);
    let z_names: Vec<String> = selected
        .iter()
        .map(|&i| data.instrument_names[i].clone())
        .chain(data.control_names.iter().cloned())
        .collect();
    gram_inverse(&z, &z_names)?;

    let mut first = Vec::with_capacity(m);
    let mut x_hat = DMatrix::zeros(data.n(), m + data.controls.ncols());
    let mut own = own_selections.into_iter();
    for j in 0..m {
        let (fs, fitted) = first_stage(data, j, selected, own.next().unwrap_or_default())?;
        x_hat.set_column(j, &fitted);
        first.push(fs);
    }
    x_hat
        .columns_mut(m, data.controls.ncols())
        .copy_from(&data.controls);
    let x = hcat(&data.endog, &data.controls);
    let names: Vec<String> = data
        .endog_names
        .iter()
        .chain(&data.control_names)
        .cloned()
        .collect();

    let second = ols(&data.y, &x_hat, &names)?;
    let residuals = &data.y - &x * &second.beta;
    let vcov = cluster_robust_vcov(&x_hat, &residuals, &data.clusters, &names)?;
    let g = data.n_clusters();
    Ok(IvEstimate {
        estimator: kind,
        coefficients: coefficients(&names, &second.beta, &vcov, g)?,
        first_stage: first,
        vcov,
        n: data.n(),
        n_clusters: g,
        n_candidates: data.instruments.ncols(),
    })
}

/// OLS of `y` on endogenous regressors and controls, clustered.
pub fn naive_fe(data: &IvData) -> Result<IvEstimate> {
    data.validate()?;
    let x = hcat(&data.endog, &data.controls);
    let names: Vec<String> = data
        .endog_names
        .iter()
        .chain(&data.control_names)
        .cloned()
        .collect();
    let fit = ols(&data.y, &x, &names)?;
    let vcov = cluster_robust_vcov(&x, &fit.residuals, &data.clusters, &names)?;
    let g = data.n_clusters();
    Ok(IvEstimate {
        estimator: EstimatorKind::NaiveFe,
        coefficients: coefficients(&names, &fit.beta, &vcov, g)?,
        first_stage: Vec::new(),
        vcov,
        n: data.n(),
        n_clusters: g,
        n_candidates: data.instruments.ncols(),
    })
}

/// Homoskedastic covariance of the naive regression, for diagnostics.
pub fn naive_classical_vcov(data: &IvData) -> Result<DMatrix<f64>> {
    let x = hcat(&data.endog, &data.controls);
    let fit = ols(&data.y, &x, &[])?;
    Ok(classical_vcov(&fit, x.nrows(), x.ncols()))
}

/// Candidate instruments that are not a linear combination of the controls
/// and earlier candidates.
fn independent_candidates(data: &IvData) -> Result<Vec<usize>> {
    let c = data.controls.ncols();
    let stacked = hcat(&data.controls, &data.instruments);
    let dependent = dependent_columns(&stacked);
    if let Some(&j) = dependent.iter().find(|&&j| j < c) {
        return Err(Error::RankDeficient(vec![data.control_names[j].clone()]));
    }
    Ok((0..data.instruments.ncols())
        .filter(|j| !dependent.contains(&(j + c)))
        .collect())
}

/// 2SLS with every independent candidate instrument.
pub fn iv_all(data: &IvData) -> Result<IvEstimate> {
    data.validate()?;
    let keep = independent_candidates(data)?;
    two_sls(data, &keep, Vec::new(), EstimatorKind::IvAll)
}

/// Per-endogenous Lasso selection on control-partialled data, then 2SLS on
/// the union of selections. Dependent candidates are never eligible.
pub fn iv_lasso(data: &IvData, cfg: &LassoConfig) -> Result<IvEstimate> {
    data.validate()?;
    let keep = independent_candidates(data)?;
    let z_tilde = residualize(
        &data.instruments.select_columns(&keep),
        &data.controls,
        &data.control_names,
    )?;
    let d_tilde = residualize(&data.endog, &data.controls, &data.control_names)?;
    let mut union = std::collections::BTreeSet::new();
    let mut own = Vec::new();
    for j in 0..data.endog.ncols() {
        let target: Vec<f64> = d_tilde.column(j).iter().copied().collect();
        let sel = lasso_select(&target, &z_tilde, cfg)?;
        let chosen = sel.require_nonempty().map_err(|e| match e {
            Error::EmptySelection => Error::UnderIdentified(format!(
                "no instrument selected for {}",
                data.endog_names[j]
            )),
            other => other,
        })?;
        union.extend(chosen.iter().map(|&i| keep[i]));
        own.push(
            chosen
                .iter()
                .map(|&i| data.instrument_names[keep[i]].clone())
                .collect(),
        );
    }
    let selected: Vec<usize> = union.into_iter().collect();
    two_sls(data, &selected, own, EstimatorKind::IvLasso)
}

pub fn estimate(data: &IvData, kind: EstimatorKind, cfg: &LassoConfig) -> Result<IvEstimate> {
    match kind {
        EstimatorKind::NaiveFe => naive_fe(data),
        EstimatorKind::IvAll => iv_all(data),
        EstimatorKind::IvLasso => iv_lasso(data, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherControls {
    /// Twelve monthly temperature and twelve humidity z-scores.
    Monthly,
    /// Quarterly means of the monthly z-scores (DJF, MAM, JJA, SON).
    Seasonal,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlsConfig {
    pub gdp: bool,
    pub hospital_beds: bool,
    pub weather: WeatherControls,
}

impl Default for ControlsConfig {
    fn default() -> Self {
        Self {
            gdp: true,
            hospital_beds: true,
            weather: WeatherControls::Monthly,
        }
    }
}

const SEASONS: [(&str, [usize; 3]); 4] = [
    ("djf", [11, 0, 1]),
    ("mam", [2, 3, 4]),
    ("jja", [5, 6, 7]),
    ("son", [8, 9, 10]),
];

impl ControlsConfig {
    pub fn columns(&self, rows: &[&CountyYearRow]) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = Vec::new();
        let col =
            |f: &dyn Fn(&CountyYearRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
        if self.gdp {
            out.push((
                "prim_gdp_pc_10k".into(),
                col(&|r| r.prim_gdp_pc / GDP_ESTIMATION_SCALE),
            ));
            out.push((
                "sec_gdp_pc_10k".into(),
                col(&|r| r.sec_gdp_pc / GDP_ESTIMATION_SCALE),
            ));
        }
        if self.hospital_beds {
            out.push((
                "hospital_beds_per_10k".into(),
                col(&|r| r.hospital_beds_per_10k),
            ));
        }
        match self.weather {
            WeatherControls::Monthly => {
                for m in 0..12 {
                    out.push((format!("z_temp_m{:02}", m + 1), col(&|r| r.z_temp[m])));
                }
                for m in 0..12 {
                    out.push((format!("z_rh_m{:02}", m + 1), col(&|r| r.z_rh[m])));
                }
            }
            WeatherControls::Seasonal => {
                for (label, months) in SEASONS {
                    out.push((
                        format!("z_temp_{label}"),
                        col(&|r| months.iter().map(|&m| r.z_temp[m]).sum::<f64>() / 3.0),
                    ));
                }
                for (label, months) in SEASONS {
                    out.push((
                        format!("z_rh_{label}"),
                        col(&|r| months.iter().map(|&m| r.z_rh[m]).sum::<f64>() / 3.0),
                    ));
                }
            }
            WeatherControls::None => {}
        }
        out
    }
}

/// Model-ready design built from the analysis table.
#[derive(Debug, Clone)]
pub struct PanelDesign {
    pub data: IvData,
    pub keys: Vec<(String, i32)>,
    /// Candidates with no variation left after absorbing fixed effects.
    pub dropped_instruments: Vec<String>,
    pub fe_label: String,
}

pub fn endogenous_name(p: Pollutant) -> &'static str {
    match p {
        Pollutant::So2Du => "so2_du",
        Pollutant::Pm25Ugm3 => "pm25_ugm3",
    }
}

/// Restrict to rows with every endogenous pollutant observed, align the
/// instrument matrix, and absorb the fixed effects from every column.
pub fn build_design(
    rows: &[CountyYearRow],
    instruments: &InstrumentMatrix,
    endogenous: &[Pollutant],
    plan: &FixedEffectsPlan,
    controls: &ControlsConfig,
) -> Result<PanelDesign> {
    plan.validate()?;
    if endogenous.is_empty() {
        return Err(Error::InvalidInput(
            "no endogenous pollutant requested".into(),
        ));
    }
    let idx = model_sample(rows, endogenous);
    if idx.is_empty() {
        return Err(Error::EmptySubsample(
            "no rows with every endogenous pollutant observed".into(),
        ));
    }
    let sample: Vec<&CountyYearRow> = idx.iter().map(|&i| &rows[i]).collect();
    let keys: Vec<(String, i32)> = sample.iter().map(|r| r.key()).collect();
    let inst = instruments.aligned_to(&keys)?;
    let labels = plan.labels(&sample);
    let n = sample.len();

    let y_raw: Vec<f64> = sample.iter().map(|r| r.mortality_per_1000).collect();
    let endog_raw: Vec<Vec<f64>> = endogenous
        .iter()
        .map(|&p| {
            sample
                .iter()
                .map(|r| r.pollutant(p).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let control_cols = controls.columns(&sample);
    let inst_raw: Vec<Vec<f64>> = (0..inst.n_cols()).map(|j| inst.column(j)).collect();

    let y = demean(&[y_raw], &labels)?.remove(0);
    let endog = demean(&endog_raw, &labels)?;
    let ctrl = demean(
        &control_cols
            .iter()
            .map(|(_, c)| c.clone())
            .collect::<Vec<_>>(),
        &labels,
    )?;
    let inst_dm = demean(&inst_raw, &labels)?;

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in inst_dm.iter().enumerate() {
        let raw = norm(&inst_raw[j]);
        if raw == 0.0 || norm(col) <= 1e-9 * raw {
            dropped.push(inst.columns[j].clone());
        } else {
            kept.push(j);
        }
    }

    let to_matrix = |cols: &[&Vec<f64>]| {
        let mut m = DMatrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            m.column_mut(j).copy_from_slice(c);
        }
        m
    };
    let data = IvData {
        y: DVector::from_vec(y),
        y_name: "u5_mortality_per_1000".into(),
        endog: to_matrix(&endog.iter().collect::<Vec<_>>()),
        endog_names: endogenous
            .iter()
            .map(|&p| endogenous_name(p).to_string())
            .collect(),
        instruments: to_matrix(&kept.iter().map(|&j| &inst_dm[j]).collect::<Vec<_>>()),
        instrument_names: kept.iter().map(|&j| inst.columns[j].clone()).collect(),
        controls: to_matrix(&ctrl.iter().collect::<Vec<_>>()),
        control_names: control_cols.into_iter().map(|(n, _)| n).collect(),
        clusters: dense_labels(sample.iter().map(|r| r.province_id.clone())),
    };
    data.validate()?;
    Ok(PanelDesign {
        data,
        keys,
        dropped_instruments: dropped,
        fe_label: plan.label(),
    })
}
