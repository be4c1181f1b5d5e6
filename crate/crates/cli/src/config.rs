//! Run configuration: TOML parsing, aggregated validation and the
//! canonical echo.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plantiv_core::estimator::{ControlsConfig, EstimatorKind, LassoConfig};
use plantiv_core::exposure::{ExposureGrid, RadiusBand, MAX_LAG_YEARS, SMALL_UNIT_CAP_MW};
use plantiv_core::met::BaselineOptions;
use plantiv_core::panel::{FixedEffect, FixedEffectsPlan, SubsampleSelector};
use plantiv_core::pipeline::ModelSpec;
use plantiv_core::raster::Pollutant;
use plantiv_core::synth::DgpConfig;

use crate::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl Default for YearRange {
    fn default() -> Self {
        Self {
            first: 2001,
            last: 2010,
        }
    }
}

impl YearRange {
    pub fn range(&self) -> std::ops::RangeInclusive<i32> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub plants: Option<PathBuf>,
    pub counties: Option<PathBuf>,
    pub mortality: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub socio: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    /// Prebuilt instrument matrix; built from raw inputs when absent.
    pub instruments: Option<PathBuf>,
    /// Prebuilt analysis table; built from raw inputs when absent.
    pub panel: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub jobs: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureConfig {
    /// `[inner_km, outer_km]` pairs.
    pub bands: Vec<[f64; 2]>,
    pub lags: Vec<u32>,
    pub include_uncapped: bool,
    pub capacity_caps_mw: Vec<f64>,
    pub weighting: Vec<Weighting>,
    pub wind_columns: bool,
    pub data_start_year: Option<i32>,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            bands: RadiusBand::default_set()
                .iter()
                .map(|b| [b.inner_km(), b.outer_km()])
                .collect(),
            lags: (0..=MAX_LAG_YEARS).collect(),
            include_uncapped: true,
            capacity_caps_mw: vec![SMALL_UNIT_CAP_MW],
            weighting: vec![Weighting::Weighted, Weighting::Unweighted],
            wind_columns: true,
            data_start_year: Some(2000),
        }
    }
}

impl ExposureConfig {
    pub fn grid(&self) -> plantiv_core::Result<ExposureGrid> {
        let bands = self
            .bands
            .iter()
            .map(|b| RadiusBand::new(b[0], b[1]))
            .collect::<plantiv_core::Result<Vec<_>>>()?;
        let mut caps: Vec<Option<f64>> = Vec::new();
        if self.include_uncapped {
            caps.push(None);
        }
        caps.extend(self.capacity_caps_mw.iter().map(|&c| Some(c)));
        let weighting: Vec<bool> = self
            .weighting
            .iter()
            .map(|w| *w == Weighting::Weighted)
            .collect();
        let mut grid = ExposureGrid::full(&bands, &self.lags, &caps, &weighting)?;
        grid.wind_columns = self.wind_columns;
        grid.data_start_year = self.data_start_year;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub first_year: i32,
    pub last_year: i32,
    pub min_years: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let d = BaselineOptions::default();
        Self {
            first_year: d.first_year,
            last_year: d.last_year,
            min_years: d.min_years,
        }
    }
}

impl BaselineConfig {
    pub fn options(&self) -> BaselineOptions {
        BaselineOptions {
            first_year: self.first_year,
            last_year: self.last_year,
            min_years: self.min_years,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Pollutant codes, `SO2_DU` and/or `PM25_UGM3`.
    pub endogenous: Vec<String>,
    pub fixed_effects: Vec<FixedEffect>,
    pub estimator: EstimatorKind,
    pub controls: ControlsConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endogenous: vec![
                Pollutant::So2Du.code().into(),
                Pollutant::Pm25Ugm3.code().into(),
            ],
            fixed_effects: FixedEffectsPlan::default().effects,
            estimator: EstimatorKind::IvLasso,
            controls: ControlsConfig::default(),
        }
    }
}

/// Synthetic-data settings; the seed and year window come from the
/// top-level config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_counties: usize,
    pub n_provinces: usize,
    pub n_plants: usize,
    pub true_theta_so2: f64,
    pub true_theta_pm: f64,
    pub instrument_strength: f64,
    pub confounder_strength: f64,
    pub noise_sd_pollution: f64,
    pub noise_sd_mortality: f64,
    pub so2_first_year: Option<i32>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let d = DgpConfig::with_seed(0);
        Self {
            n_counties: d.n_counties,
            n_provinces: d.n_provinces,
            n_plants: d.n_plants,
            true_theta_so2: d.true_theta_so2,
            true_theta_pm: d.true_theta_pm,
            instrument_strength: d.instrument_strength,
            confounder_strength: d.confounder_strength,
            noise_sd_pollution: d.noise_sd_pollution,
            noise_sd_mortality: d.noise_sd_mortality,
            so2_first_year: d.so2_first_year,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LivesSavedConfig {
    pub theta_so2: f64,
    pub theta_pm: f64,
    pub delta_so2: f64,
    pub delta_pm: f64,
    pub population_u5: f64,
}

impl Default for LivesSavedConfig {
    fn default() -> Self {
        Self {
            theta_so2: 0.00134,
            theta_pm: 0.176,
            delta_so2: 0.1,
            delta_pm: 3.9,
            population_u5: 68_978_374.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub years: YearRange,
    pub subsamples: Vec<String>,
    pub inputs: InputPaths,
    pub output: OutputConfig,
    pub exposure: ExposureConfig,
    pub baseline: BaselineConfig,
    pub model: ModelConfig,
    pub lasso: LassoConfig,
    pub simulate: SimulateConfig,
    pub lives_saved: LivesSavedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            years: YearRange::default(),
            subsamples: vec!["all".into()],
            inputs: InputPaths::default(),
            output: OutputConfig::default(),
            exposure: ExposureConfig::default(),
            baseline: BaselineConfig::default(),
            model: ModelConfig::default(),
            lasso: LassoConfig::default(),
            simulate: SimulateConfig::default(),
            lives_saved: LivesSavedConfig::default(),
        }
    }
}

/// One validation problem: dotted key path and reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

fn problem(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Which raw inputs a command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InputKind {
    Plants,
    Counties,
    Mortality,
    Weather,
    Grid,
    Socio,
    Regions,
    Instruments,
    Panel,
}

impl InputKind {
    pub fn key(&self) -> &'static str {
        match self {
            InputKind::Plants => "plants",
            InputKind::Counties => "counties",
            InputKind::Mortality => "mortality",
            InputKind::Weather => "weather",
            InputKind::Grid => "grid",
            InputKind::Socio => "socio",
            InputKind::Regions => "regions",
            InputKind::Instruments => "instruments",
            InputKind::Panel => "panel",
        }
    }
}

impl InputPaths {
    pub fn get(&self, kind: InputKind) -> Option<&PathBuf> {
        match kind {
            InputKind::Plants => self.plants.as_ref(),
            InputKind::Counties => self.counties.as_ref(),
            InputKind::Mortality => self.mortality.as_ref(),
            InputKind::Weather => self.weather.as_ref(),
            InputKind::Grid => self.grid.as_ref(),
            InputKind::Socio => self.socio.as_ref(),
            InputKind::Regions => self.regions.as_ref(),
            InputKind::Instruments => self.instruments.as_ref(),
            InputKind::Panel => self.panel.as_ref(),
        }
    }
}

const EXPOSURE_INPUTS: [InputKind; 3] =
    [InputKind::Plants, InputKind::Counties, InputKind::Weather];
const PANEL_INPUTS: [InputKind; 5] = [
    InputKind::Counties,
    InputKind::Mortality,
    InputKind::Weather,
    InputKind::Grid,
    InputKind::Socio,
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigError>> {
        toml::from_str(text).map_err(|e| {
            let span = e
                .span()
                .map(|s| format!(" (bytes {}..{})", s.start, s.end))
                .unwrap_or_default();
            vec![problem("<document>", format!("{}{span}", e.message()))]
        })
    }

    /// Canonical TOML with every default filled in.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn subsample_selectors(&self) -> Vec<SubsampleSelector> {
        self.subsamples
            .iter()
            .filter_map(|s| s.parse().ok())
            .collect()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            endogenous: self
                .model
                .endogenous
                .iter()
                .filter_map(|p| p.parse().ok())
                .collect(),
            plan: FixedEffectsPlan {
                effects: self.model.fixed_effects.clone(),
            },
            controls: self.model.controls.clone(),
            lasso: self.lasso.clone(),
        }
    }

    pub fn dgp(&self, seed: u64) -> DgpConfig {
        let s = &self.simulate;
        DgpConfig {
            n_counties: s.n_counties,
            n_provinces: s.n_provinces,
            n_years: (self.years.last - self.years.first + 1).max(0) as usize,
            first_year: self.years.first,
            n_plants: s.n_plants,
            true_theta_so2: s.true_theta_so2,
            true_theta_pm: s.true_theta_pm,
            instrument_strength: s.instrument_strength,
            confounder_strength: s.confounder_strength,
            noise_sd_pollution: s.noise_sd_pollution,
            noise_sd_mortality: s.noise_sd_mortality,
            so2_first_year: s.so2_first_year,
            seed,
        }
    }

    /// Inputs `command` needs given which prebuilt files are configured.
    pub fn required_inputs(
        &self,
        command: Command,
        subsample_needs_regions: bool,
    ) -> Vec<InputKind> {
        let mut need: Vec<InputKind> = Vec::new();
        let instruments = |need: &mut Vec<InputKind>| {
            if self.inputs.instruments.is_some() {
                need.push(InputKind::Instruments);
            } else {
                need.extend(EXPOSURE_INPUTS);
            }
        };
        let panel = |need: &mut Vec<InputKind>| {
            if self.inputs.panel.is_some() {
                need.push(InputKind::Panel);
            } else {
                need.extend(PANEL_INPUTS);
            }
        };
        match command {
            Command::Simulate | Command::LivesSaved => {}
            Command::BuildExposure => need.extend(EXPOSURE_INPUTS),
            Command::BuildPanel => need.extend(PANEL_INPUTS),
            Command::Estimate => {
                instruments(&mut need);
                panel(&mut need);
                if subsample_needs_regions {
                    need.push(InputKind::Regions);
                }
            }
            Command::BalanceTest => {
                instruments(&mut need);
                need.push(InputKind::Socio);
            }
            Command::Summarize => panel(&mut need),
            Command::ValidateConfig => {
                need.extend(EXPOSURE_INPUTS);
                need.extend(PANEL_INPUTS);
                if subsample_needs_regions {
                    need.push(InputKind::Regions);
                }
            }
        }
        need.sort();
        need.dedup();
        need
    }

    /// Every problem at once; paths are resolved against `base_dir`.
    pub fn validate(
        &self,
        command: Command,
        base_dir: &Path,
        subsample_override: Option<&str>,
    ) -> Vec<ConfigError> {
        let mut errs = Vec::new();

        if self.years.first > self.years.last {
            errs.push(problem("years", "first must not exceed last"));
        }

        let subsamples: Vec<&str> = match subsample_override {
            Some(s) => vec![s],
            None => self.subsamples.iter().map(String::as_str).collect(),
        };
        if subsamples.is_empty() {
            errs.push(problem("subsamples", "at least one subsample is required"));
        }
        let mut needs_regions = false;
        for (i, s) in subsamples.iter().enumerate() {
            match s.parse::<SubsampleSelector>() {
                Ok(SubsampleSelector::All) => {}
                Ok(_) => needs_regions = true,
                Err(e) => errs.push(problem(format!("subsamples[{i}]"), e.to_string())),
            }
        }

        for kind in self.required_inputs(command, needs_regions) {
            let key = format!("inputs.{}", kind.key());
            match self.inputs.get(kind) {
                None => errs.push(problem(key, "missing required path")),
                Some(p) => {
                    let full = resolve(base_dir, p);
                    if !full.is_file() {
                        errs.push(problem(key, format!("file not found: {}", full.display())));
                    }
                }
            }
        }

        for (i, b) in self.exposure.bands.iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] >= 0.0 && b[1] > b[0]) {
                errs.push(problem(
                    format!("exposure.bands[{i}]"),
                    format!("band [{}, {}] must satisfy 0 <= inner < outer", b[0], b[1]),
                ));
            }
        }
        for (i, &lag) in self.exposure.lags.iter().enumerate() {
            if lag > MAX_LAG_YEARS {
                errs.push(problem(
                    format!("exposure.lags[{i}]"),
                    format!("lag {lag} outside allowed range [0,{MAX_LAG_YEARS}]"),
                ));
            }
        }
        for (i, &c) in self.exposure.capacity_caps_mw.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                errs.push(problem(
                    format!("exposure.capacity_caps_mw[{i}]"),
                    "cap must be positive",
                ));
            }
        }
        if !self.exposure.include_uncapped && self.exposure.capacity_caps_mw.is_empty() {
            errs.push(problem(
                "exposure.capacity_caps_mw",
                "no capacity subsets selected",
            ));
        }
        if self.exposure.weighting.is_empty() {
            errs.push(problem(
                "exposure.weighting",
                "at least one weighting is required",
            ));
        }

        if self.baseline.first_year > self.baseline.last_year {
            errs.push(problem("baseline", "first_year must not exceed last_year"));
        }
        if self.baseline.min_years < 2 {
            errs.push(problem("baseline.min_years", "must be at least 2"));
        }

        if self.model.endogenous.is_empty() {
            errs.push(problem(
                "model.endogenous",
                "at least one pollutant is required",
            ));
        }
        for (i, p) in self.model.endogenous.iter().enumerate() {
            if p.parse::<Pollutant>().is_err() {
                errs.push(problem(
                    format!("model.endogenous[{i}]"),
                    format!("unknown pollutant `{p}` (expected SO2_DU or PM25_UGM3)"),
                ));
            }
        }
        if let Err(e) = (FixedEffectsPlan {
            effects: self.model.fixed_effects.clone(),
        })
        .validate()
        {
            errs.push(problem("model.fixed_effects", e.to_string()));
        }
        if let Err(e) = self.lasso.validate() {
            errs.push(problem("lasso", e.to_string()));
        }

        if command == Command::Simulate {
            match self.seed {
                None => errs.push(problem("seed", "simulate needs a seed (config or --seed)")),
                Some(seed) => {
                    if let Err(e) = self.dgp(seed).validate() {
                        errs.push(problem("simulate", e.to_string()));
                    }
                }
            }
        }

        let l = &self.lives_saved;
        for (k, v) in [
            ("theta_so2", l.theta_so2),
            ("theta_pm", l.theta_pm),
            ("delta_so2", l.delta_so2),
            ("delta_pm", l.delta_pm),
            ("population_u5", l.population_u5),
        ] {
            if !v.is_finite() {
                errs.push(problem(format!("lives_saved.{k}"), "must be finite"));
            }
        }
        if !(l.population_u5 > 0.0) {
            errs.push(problem("lives_saved.population_u5", "must be positive"));
        }
        errs
    }
}

pub fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}
