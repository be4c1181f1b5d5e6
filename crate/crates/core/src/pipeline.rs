//! In-memory end-to-end stages shared by the command line and the Monte
//! Carlo harness.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use crate::error::Result;
use crate::estimator::iv::{
    build_design, estimate, ControlsConfig, EstimatorKind, IvEstimate, PanelDesign,
};
use crate::estimator::lasso::LassoConfig;
use crate::exposure::{build_instrument_matrix, ExposureGrid, InstrumentMatrix, PlantUnit};
use crate::geo::CountyGeometry;
use crate::met::{build_baseline, standardize_years, BaselineOptions, MonthlyWeather};
use crate::panel::{
    assemble, CountyYearRow, FixedEffectsPlan, JoinReport, MortalityRecord, SocioRecord,
};
use crate::raster::{
    annual_means, assign_cells, county_means, unique_cells, CountyPollutant, GridObservation,
    Pollutant,
};

/// Every raw input the pipeline consumes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inputs {
    pub plants: Vec<PlantUnit>,
    pub counties: Vec<CountyGeometry>,
    pub weather: Vec<MonthlyWeather>,
    pub grid: Vec<GridObservation>,
    pub socio: Vec<SocioRecord>,
    pub mortality: Vec<MortalityRecord>,
}

pub fn build_exposure(
    inputs: &Inputs,
    years: RangeInclusive<i32>,
    grid: &ExposureGrid,
) -> Result<InstrumentMatrix> {
    build_instrument_matrix(
        &inputs.plants,
        &inputs.counties,
        &inputs.weather,
        years,
        grid,
    )
}

/// County monthly and annual pollutant means from gridded observations.
pub fn aggregate_pollution(
    grid: &[GridObservation],
    counties: &[CountyGeometry],
) -> Result<Vec<CountyPollutant>> {
    let cells = unique_cells(grid);
    let membership = assign_cells(&cells, counties);
    county_means(grid, &membership, counties)
}

#[derive(Debug, Clone)]
pub struct PanelBuild {
    pub rows: Vec<CountyYearRow>,
    pub join: JoinReport,
    pub pollution: Vec<CountyPollutant>,
    /// County-years skipped for incomplete weather.
    pub incomplete_weather: Vec<(String, i32)>,
}

pub fn build_panel(
    inputs: &Inputs,
    years: RangeInclusive<i32>,
    baseline: &BaselineOptions,
) -> Result<PanelBuild> {
    let base = build_baseline(&inputs.weather, baseline)?;
    let (standardized, incomplete_weather) =
        standardize_years(&inputs.weather, &base, years.clone())?;
    let pollution = aggregate_pollution(&inputs.grid, &inputs.counties)?;
    let in_years = |m: BTreeMap<(String, i32), f64>| -> BTreeMap<(String, i32), f64> {
        m.into_iter()
            .filter(|((_, y), _)| years.contains(y))
            .collect()
    };
    let so2 = in_years(annual_means(&pollution, Pollutant::So2Du));
    let pm = in_years(annual_means(&pollution, Pollutant::Pm25Ugm3));
    let mortality: Vec<MortalityRecord> = inputs
        .mortality
        .iter()
        .filter(|m| years.contains(&m.year))
        .cloned()
        .collect();
    let (rows, join) = assemble(
        &mortality,
        &inputs.socio,
        &standardized,
        &so2,
        &pm,
        &inputs.counties,
    )?;
    Ok(PanelBuild {
        rows,
        join,
        pollution,
        incomplete_weather,
    })
}

/// Model settings for one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub endogenous: Vec<Pollutant>,
    pub plan: FixedEffectsPlan,
    pub controls: ControlsConfig,
    pub lasso: LassoConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            endogenous: vec![Pollutant::So2Du, Pollutant::Pm25Ugm3],
            plan: FixedEffectsPlan::default(),
            controls: ControlsConfig::default(),
            lasso: LassoConfig::default(),
        }
    }
}

pub fn design(
    rows: &[CountyYearRow],
    instruments: &InstrumentMatrix,
    spec: &ModelSpec,
) -> Result<PanelDesign> {
    build_design(
        rows,
        instruments,
        &spec.endogenous,
        &spec.plan,
        &spec.controls,
    )
}

pub fn run_estimator(
    design: &PanelDesign,
    kind: EstimatorKind,
    spec: &ModelSpec,
) -> Result<IvEstimate> {
    estimate(&design.data, kind, &spec.lasso)
}
