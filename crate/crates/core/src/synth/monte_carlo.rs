//! Replicated simulate-and-estimate runs with bias, spread and coverage.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::iv::{endogenous_name, EstimatorKind};
use crate::exposure::ExposureGrid;
use crate::met::BaselineOptions;
use crate::pipeline::{build_exposure, build_panel, design, run_estimator, ModelSpec};
use crate::raster::Pollutant;
use crate::synth::dgp::{generate, DgpConfig};

/// Share of failed replications per estimator above which the run fails.
pub const MAX_FAILURE_SHARE: f64 = 0.10;
/// Minimum successful replications for a coverage figure.
pub const MIN_COVERAGE_REPLICATIONS: usize = 10;

#[derive(Debug, Clone)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    pub model: ModelSpec,
    pub grid: ExposureGrid,
}

impl McConfig {
    pub fn new(dgp: DgpConfig, replications: usize) -> Self {
        Self {
            dgp,
            replications,
            estimators: EstimatorKind::ALL.to_vec(),
            model: ModelSpec::default(),
            grid: ExposureGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub estimator: EstimatorKind,
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub records: Vec<EstimateRecord>,
    pub failures: Vec<(EstimatorKind, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub estimator: EstimatorKind,
    pub parameter: String,
    pub truth: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub bias: f64,
    /// Sample sd of the estimates across replications.
    pub mc_sd: Option<f64>,
    /// `mc_sd / sqrt(n_ok)`.
    pub mc_se: Option<f64>,
    pub mean_std_error: f64,
    /// `None` when fewer than `MIN_COVERAGE_REPLICATIONS` succeeded.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub replications: Vec<Replication>,
    pub summaries: Vec<Summary>,
}

impl McResult {
    pub fn summary(&self, estimator: EstimatorKind, parameter: &str) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|s| s.estimator == estimator && s.parameter == parameter)
    }
}

pub fn truth_for(cfg: &DgpConfig, p: Pollutant) -> f64 {
    match p {
        Pollutant::So2Du => cfg.true_theta_so2,
        Pollutant::Pm25Ugm3 => cfg.true_theta_pm,
    }
}

/// One replication of generate, exposure build, panel build and every
/// requested estimator. Estimator failures are recorded, not raised.
pub fn run_replication(cfg: &McConfig, index: usize) -> Replication {
    let seed = cfg.dgp.seed.wrapping_add(index as u64);
    let dgp = DgpConfig {
        seed,
        ..cfg.dgp.clone()
    };
    let mut rep = Replication {
        index,
        seed,
        records: Vec::new(),
        failures: Vec::new(),
    };
    let prepared = generate(&dgp).and_then(|bundle| {
        let instruments = build_exposure(&bundle.inputs, dgp.years(), &cfg.grid)?;
        let panel = build_panel(&bundle.inputs, dgp.years(), &BaselineOptions::default())?;
        design(&panel.rows, &instruments, &cfg.model)
    });
    let design = match prepared {
        Ok(d) => d,
        Err(e) => {
            rep.failures = cfg.estimators.iter().map(|&k| (k, e.to_string())).collect();
            return rep;
        }
    };
    for &kind in &cfg.estimators {
        match run_estimator(&design, kind, &cfg.model) {
            Ok(est) => {
                for &p in &cfg.model.endogenous {
                    let name = endogenous_name(p);
                    let c = est
                        .coefficient(name)
                        .expect("endogenous coefficient present");
                    rep.records.push(EstimateRecord {
                        estimator: kind,
                        parameter: name.to_string(),
                        estimate: c.estimate,
                        std_error: c.std_error,
                        covered: c.covers(truth_for(&dgp, p)),
                    });
                }
            }
            Err(e) => rep.failures.push((kind, e.to_string())),
        }
    }
    rep
}

pub fn monte_carlo(cfg: &McConfig) -> Result<McResult> {
    if cfg.replications < 2 {
        return Err(Error::InvalidInput(
            "Monte Carlo needs at least 2 replications".into(),
        ));
    }
    cfg.dgp.validate()?;
    let replications: Vec<Replication> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| run_replication(cfg, i))
        .collect();

    let mut failed: BTreeMap<EstimatorKind, usize> = BTreeMap::new();
    for r in &replications {
        for (k, _) in &r.failures {
            *failed.entry(*k).or_default() += 1;
        }
    }
    for (&k, &n) in &failed {
        if n as f64 > MAX_FAILURE_SHARE * cfg.replications as f64 {
            let example = replications
                .iter()
                .flat_map(|r| r.failures.iter())
                .find(|(e, _)| *e == k)
                .map(|(_, m)| m.clone())
                .unwrap_or_default();
            return Err(Error::Harness(format!(
                "{k} failed in {n} of {} replications (e.g. {example})",
                cfg.replications
            )));
        }
    }

    let mut summaries = Vec::new();
    for &kind in &cfg.estimators {
        for &p in &cfg.model.endogenous {
            let name = endogenous_name(p);
            let truth = truth_for(&cfg.dgp, p);
            let recs: Vec<&EstimateRecord> = replications
                .iter()
                .flat_map(|r| r.records.iter())
                .filter(|r| r.estimator == kind && r.parameter == name)
                .collect();
            let n = recs.len();
            let values: Vec<f64> = recs.iter().map(|r| r.estimate).collect();
            let mean = crate::numeric::mean(&values).unwrap_or(f64::NAN);
            let mc_sd = crate::numeric::sample_sd(&values);
            summaries.push(Summary {
                estimator: kind,
                parameter: name.to_string(),
                truth,
                n_ok: n,
                n_failed: failed.get(&kind).copied().unwrap_or(0),
                mean,
                bias: mean - truth,
                mc_sd,
                mc_se: mc_sd.map(|s| s / (n as f64).sqrt()),
                mean_std_error: crate::numeric::mean(
                    &recs.iter().map(|r| r.std_error).collect::<Vec<_>>(),
                )
                .unwrap_or(f64::NAN),
                coverage: (n >= MIN_COVERAGE_REPLICATIONS)
                    .then(|| recs.iter().filter(|r| r.covered).count() as f64 / n as f64),
            });
        }
    }
    Ok(McResult {
        replications,
        summaries,
    })
}
