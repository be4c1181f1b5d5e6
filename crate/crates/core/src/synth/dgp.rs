//! Synthetic county panel with planted pollution and mortality effects.
//!
//! Pollution is a linear index of true exposure instruments plus county and
//! year effects, an unobserved "industrialization" confounder and noise.
//! Mortality responds to the county-aggregated pollutant values, the GDP
//! and hospital-bed controls, fixed effects and the same confounder.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::{build_instrument_matrix, ExposureGrid, InstrumentMatrix, PlantUnit};
use crate::geo::{haversine_km, CountyGeometry, GeoPoint, Polygon};
use crate::met::MonthlyWeather;
use crate::panel::{MortalityRecord, PolicyZone, ProvinceTags, Region, RegionMap, SocioRecord};
use crate::pipeline::{aggregate_pollution, Inputs};
use crate::raster::{annual_means, assign_cells, GridObservation, Pollutant};

/// Name of the seeded generator, recorded in run metadata.
pub const RNG_NAME: &str = "ChaCha8";

pub const WEATHER_FIRST_YEAR: i32 = 1950;
const LATTICE_SPACING_DEG: f64 = 0.5;
const ORIGIN: (f64, f64) = (28.0, 108.0);
const SO2_SCALE: f64 = 0.05;
const PM_SCALE: f64 = 5.0;
const SO2_INDEX_LOADING: f64 = 3.0;
const PM_INDEX_LOADING: f64 = 2.5;
const CONFOUNDER_POLLUTION_LOADING: f64 = 0.5;

const SO2_INDEX: [(&str, f64); 5] = [
    ("ret_w_0_100km_all_lag0", 1.0),
    ("ret_w_0_100km_all_lag1", 1.0),
    ("ret_w_0_100km_all_lag2", 1.0),
    ("ret_w_25_100km_all_lag0", 0.5),
    ("fgd_so2_lag1", 1.0),
];

const PM_INDEX: [(&str, f64); 7] = [
    ("fgd_cap_lag0", 1.0),
    ("fgd_cap_lag2", 1.0),
    ("fgd_so2_lag1", 0.5),
    ("ret_w_50_100km_all_lag3", 0.5),
    ("ws100_m12", 1.0),
    ("ws100_m01", 1.0),
    ("ws100_m05", 0.5),
];

fn d_provinces() -> usize {
    40
}
fn d_counties() -> usize {
    120
}
fn d_years() -> usize {
    10
}
fn d_first_year() -> i32 {
    2001
}
fn d_plants() -> usize {
    400
}
fn d_theta_so2() -> f64 {
    0.00134
}
fn d_theta_pm() -> f64 {
    0.176
}
fn d_one() -> f64 {
    1.0
}
fn d_noise_pollution() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    #[serde(default = "d_counties")]
    pub n_counties: usize,
    #[serde(default = "d_provinces")]
    pub n_provinces: usize,
    #[serde(default = "d_years")]
    pub n_years: usize,
    #[serde(default = "d_first_year")]
    pub first_year: i32,
    #[serde(default = "d_plants")]
    pub n_plants: usize,
    #[serde(default = "d_theta_so2")]
    pub true_theta_so2: f64,
    #[serde(default = "d_theta_pm")]
    pub true_theta_pm: f64,
    /// Scales the whole first-stage index, exposures and wind alike.
    #[serde(default = "d_one")]
    pub instrument_strength: f64,
    #[serde(default = "d_one")]
    pub confounder_strength: f64,
    #[serde(default = "d_noise_pollution")]
    pub noise_sd_pollution: f64,
    #[serde(default = "d_one")]
    pub noise_sd_mortality: f64,
    /// First year with SO2 observations; earlier years carry none.
    #[serde(default)]
    pub so2_first_year: Option<i32>,
    pub seed: u64,
}

impl DgpConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_counties: d_counties(),
            n_provinces: d_provinces(),
            n_years: d_years(),
            first_year: d_first_year(),
            n_plants: d_plants(),
            true_theta_so2: d_theta_so2(),
            true_theta_pm: d_theta_pm(),
            instrument_strength: 1.0,
            confounder_strength: 1.0,
            noise_sd_pollution: d_noise_pollution(),
            noise_sd_mortality: 1.0,
            so2_first_year: None,
            seed,
        }
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_years as i32 - 1
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year..=self.last_year()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_counties == 0 || self.n_plants == 0 || self.n_years == 0 {
            problems.push("counts must be positive".to_string());
        }
        if self.n_years < 2 {
            problems.push("n_years must be at least 2".into());
        }
        if self.n_provinces < 2 || self.n_provinces > self.n_counties {
            problems.push("n_provinces must lie in [2, n_counties]".into());
        }
        if self.first_year <= WEATHER_FIRST_YEAR + 50 {
            problems.push(format!(
                "first_year must be after {}",
                WEATHER_FIRST_YEAR + 50
            ));
        }
        for (name, v) in [
            ("true_theta_so2", self.true_theta_so2),
            ("true_theta_pm", self.true_theta_pm),
            ("instrument_strength", self.instrument_strength),
            ("confounder_strength", self.confounder_strength),
        ] {
            if !v.is_finite() {
                problems.push(format!("{name} must be finite"));
            }
        }
        for (name, v) in [
            ("noise_sd_pollution", self.noise_sd_pollution),
            ("noise_sd_mortality", self.noise_sd_mortality),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} must be finite and non-negative"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// Latent values behind one county-year.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub county_id: String,
    pub year: i32,
    pub so2_planted: f64,
    pub pm25_planted: f64,
    pub confounder: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBundle {
    pub inputs: Inputs,
    pub regions: RegionMap,
    pub truth: Vec<TruthRow>,
    pub config: DgpConfig,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn standardized_index(m: &InstrumentMatrix, weights: &[(&str, f64)]) -> Vec<f64> {
    let n = m.n_rows();
    let mut idx = vec![0.0; n];
    for &(name, w) in weights {
        let Some(j) = m.column_index(name) else {
            continue;
        };
        let col = m.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 {
            for (v, x) in idx.iter_mut().zip(&col) {
                *v += w * (x - mean) / sd;
            }
        }
    }
    let mean = idx.iter().sum::<f64>() / n as f64;
    let sd = (idx.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    idx.iter()
        .map(|x| if sd > 0.0 { (x - mean) / sd } else { 0.0 })
        .collect()
}

fn lattice(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<CountyGeometry>, usize, usize)> {
    let cols = ((cfg.n_counties as f64 * 1.2).sqrt().ceil() as usize).max(1);
    let rows = cfg.n_counties.div_ceil(cols);
    let jitter =
        Uniform::new(-0.1 * LATTICE_SPACING_DEG, 0.1 * LATTICE_SPACING_DEG).expect("valid range");
    let half = 0.4 * LATTICE_SPACING_DEG;
    let mut counties = Vec::with_capacity(cfg.n_counties);
    for i in 0..cfg.n_counties {
        let (r, c) = (i / cols, i % cols);
        let lat = ORIGIN.0 + r as f64 * LATTICE_SPACING_DEG + jitter.sample(rng);
        let lon = ORIGIN.1 + c as f64 * LATTICE_SPACING_DEG + jitter.sample(rng);
        let centroid = GeoPoint::new(lat, lon)?;
        let ring = [(-half, -half), (-half, half), (half, half), (half, -half)]
            .iter()
            .map(|&(a, b)| GeoPoint::new(lat + a, lon + b))
            .collect::<Result<Vec<_>>>()?;
        counties.push(CountyGeometry {
            county_id: format!("C{:04}", i + 1),
            province_id: format!("P{:02}", i * cfg.n_provinces / cfg.n_counties + 1),
            centroid,
            polygon: Polygon::new(ring)?,
        });
    }
    Ok((counties, rows, cols))
}

fn plants(
    cfg: &DgpConfig,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PlantUnit>> {
    let lat_range = Uniform::new(
        ORIGIN.0 - 0.5,
        ORIGIN.0 + rows as f64 * LATTICE_SPACING_DEG + 0.5,
    )
    .expect("range");
    let lon_range = Uniform::new(
        ORIGIN.1 - 0.5,
        ORIGIN.1 + cols as f64 * LATTICE_SPACING_DEG + 0.5,
    )
    .expect("range");
    let retire_years: Vec<i32> = (2000..=cfg.last_year()).collect();
    let retire_weights: Vec<f64> = retire_years
        .iter()
        .map(|&y| if y == 2007 || y == 2008 { 5.0 } else { 1.0 })
        .collect();
    let retire_pick =
        WeightedIndex::new(&retire_weights).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let fgd_years: Vec<i32> = (2006..=2010.min(cfg.last_year())).collect();
    let mut out = Vec::with_capacity(cfg.n_plants);
    for i in 0..cfg.n_plants {
        let location = GeoPoint::new(lat_range.sample(rng), lon_range.sample(rng))?;
        let capacity_mw = if rng.random::<f64>() < 0.3 {
            rng.random_range(6.0..50.0)
        } else {
            rng.random_range(100.0..600.0)
        };
        let commission_year = (rng.random::<f64>() < 0.3).then(|| rng.random_range(1975..=1999));
        let retire_year =
            (rng.random::<f64>() < 0.55).then(|| retire_years[retire_pick.sample(rng)]);
        let retire_month = retire_year.map(|_| rng.random_range(1..=12u32));
        let eligible: Vec<i32> = fgd_years
            .iter()
            .copied()
            .filter(|&y| retire_year.is_none_or(|r| y < r))
            .collect();
        let fgd_install_year = if !eligible.is_empty() && rng.random::<f64>() < 0.5 {
            Some(eligible[rng.random_range(0..eligible.len())])
        } else {
            None
        };
        let so2_removed_10kt =
            fgd_install_year.map(|_| capacity_mw * rng.random_range(0.5..1.5) / 100.0);
        out.push(PlantUnit {
            unit_id: format!("U{:05}", i + 1),
            location,
            capacity_mw,
            commission_year,
            retire_year,
            retire_month,
            fgd_install_year,
            so2_removed_10kt,
        });
    }
    Ok(out)
}

fn weather(
    cfg: &DgpConfig,
    counties: &[CountyGeometry],
    rng: &mut ChaCha8Rng,
) -> Vec<MonthlyWeather> {
    let mut out = Vec::new();
    let climate: Vec<(f64, f64)> = counties
        .iter()
        .map(|c| {
            (
                25.0 - 0.8 * (c.centroid.lat() - 20.0) + normal(rng),
                10.0 + rng.random_range(0.0..4.0),
            )
        })
        .collect();
    for (county, &(base, amp)) in counties.iter().zip(&climate) {
        for year in WEATHER_FIRST_YEAR..=cfg.last_year() {
            for month in 1..=12u32 {
                let season = (2.0 * std::f64::consts::PI * (month as f64 - 7.0) / 12.0).cos();
                let t2m_c = base
                    + amp * season
                    + 0.01 * (year - WEATHER_FIRST_YEAR) as f64
                    + 1.5 * normal(rng);
                let dewpoint_c = t2m_c - rng.random_range(1.0..9.0);
                let precip_mm = (60.0 + 80.0 * season + 20.0 * normal(rng)).max(0.0);
                let u100 = 4.0 + 2.5 * normal(rng);
                let v100 = 1.0 + 2.5 * normal(rng);
                out.push(MonthlyWeather {
                    county_id: county.county_id.clone(),
                    year,
                    month,
                    t2m_c,
                    dewpoint_c,
                    precip_mm,
                    u10: 0.6 * u100 + 0.3 * normal(rng),
                    v10: 0.6 * v100 + 0.3 * normal(rng),
                    u100,
                    v100,
                });
            }
        }
    }
    out
}

fn region_map(cfg: &DgpConfig) -> RegionMap {
    (0..cfg.n_provinces)
        .map(|p| {
            let mut regions = BTreeSet::new();
            regions.insert(match p * 3 / cfg.n_provinces {
                0 => Region::East,
                1 => Region::Northwest,
                _ => Region::Southwest,
            });
            if p % 7 == 3 {
                regions.insert(Region::East);
            }
            let zone = [PolicyZone::Arcz, PolicyZone::So2cz, PolicyZone::Nps][p % 3];
            (format!("P{:02}", p + 1), ProvinceTags { regions, zone })
        })
        .collect()
}

/// Full synthetic input bundle for one seed. Identical configs give
/// identical bundles.
pub fn generate(cfg: &DgpConfig) -> Result<SynthBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (counties, rows, cols) = lattice(cfg, &mut rng)?;
    let plants = plants(cfg, rows, cols, &mut rng)?;
    let weather = weather(cfg, &counties, &mut rng);
    let instruments = build_instrument_matrix(
        &plants,
        &counties,
        &weather,
        cfg.years(),
        &ExposureGrid::default(),
    )?;
    let so2_idx = standardized_index(&instruments, &SO2_INDEX);
    let pm_idx = standardized_index(&instruments, &PM_INDEX);

    let n_years = cfg.n_years;
    let s = cfg.instrument_strength;
    let noise_p = cfg.noise_sd_pollution;

    // Rows of the instrument matrix are sorted by (county_id, year), which
    // matches the county order of the lattice.
    let year_so2: Vec<f64> = (0..n_years).map(|_| 0.02 * normal(&mut rng)).collect();
    let year_pm: Vec<f64> = (0..n_years).map(|_| 2.0 * normal(&mut rng)).collect();
    let year_m: Vec<f64> = (0..n_years)
        .map(|t| -0.8 * t as f64 + normal(&mut rng))
        .collect();
    let mid = (n_years as f64 - 1.0) / 2.0;

    let mut truth = Vec::with_capacity(cfg.n_counties * n_years);
    let mut socio = Vec::new();
    let mut county_mort_fe = Vec::with_capacity(cfg.n_counties);
    for (c, county) in counties.iter().enumerate() {
        let fe_so2 = 0.80 + 0.05 * normal(&mut rng);
        let fe_pm = 60.0 + 8.0 * normal(&mut rng);
        county_mort_fe.push(rng.random_range(15.0..50.0));
        let trend = normal(&mut rng);
        let mut ar = 0.0;
        let prim0 = rng.random_range(2000.0..6000.0);
        let sec0 = rng.random_range(3000.0..30000.0);
        let beds0 = rng.random_range(15.0..40.0);
        for year in (cfg.first_year - 1)..=cfg.last_year() {
            let t = (year - cfg.first_year) as f64;
            socio.push(SocioRecord {
                county_id: county.county_id.clone(),
                year,
                prim_gdp_pc_cny: prim0 * (0.05 * t + 0.05 * normal(&mut rng)).exp(),
                sec_gdp_pc_cny: sec0 * (0.10 * t + 0.05 * normal(&mut rng)).exp(),
                hospital_beds_per_10k: beds0 + 0.3 * t + normal(&mut rng),
            });
        }
        for t in 0..n_years {
            let row = c * n_years + t;
            ar = 0.7 * ar + 0.5 * normal(&mut rng);
            let confounder = trend * (t as f64 - mid) / mid.max(1.0) + ar;
            let so2 = fe_so2 + year_so2[t] - SO2_INDEX_LOADING * s * SO2_SCALE * so2_idx[row]
                + CONFOUNDER_POLLUTION_LOADING * SO2_SCALE * confounder
                + noise_p * SO2_SCALE * normal(&mut rng);
            let pm = fe_pm + year_pm[t] - PM_INDEX_LOADING * s * PM_SCALE * pm_idx[row]
                + CONFOUNDER_POLLUTION_LOADING * PM_SCALE * confounder
                + noise_p * PM_SCALE * normal(&mut rng);
            truth.push(TruthRow {
                county_id: county.county_id.clone(),
                year: cfg.first_year + t as i32,
                so2_planted: so2,
                pm25_planted: pm,
                confounder,
            });
        }
    }

    let grid = grid_observations(cfg, &counties, rows, cols, &truth, &mut rng)?;
    let pollution = aggregate_pollution(&grid, &counties)?;
    let so2_obs = annual_means(&pollution, Pollutant::So2Du);
    let pm_obs = annual_means(&pollution, Pollutant::Pm25Ugm3);
    let socio_index: BTreeMap<(&str, i32), &SocioRecord> = socio
        .iter()
        .map(|r| ((r.county_id.as_str(), r.year), r))
        .collect();

    let mut mortality = Vec::with_capacity(truth.len());
    for (row, tr) in truth.iter().enumerate() {
        let c = row / n_years;
        let t = row % n_years;
        let key = (tr.county_id.clone(), tr.year);
        let so2 = so2_obs.get(&key).copied().unwrap_or(tr.so2_planted);
        let pm = pm_obs.get(&key).copied().unwrap_or(tr.pm25_planted);
        let soc = socio_index[&(tr.county_id.as_str(), tr.year)];
        let gdp = (soc.prim_gdp_pc_cny + soc.sec_gdp_pc_cny) / 10_000.0;
        let value =
            county_mort_fe[c] + year_m[t] + cfg.true_theta_so2 * so2 + cfg.true_theta_pm * pm
                - 0.3 * gdp
                - 0.02 * soc.hospital_beds_per_10k
                + cfg.confounder_strength * tr.confounder
                + cfg.noise_sd_mortality * normal(&mut rng);
        mortality.push(MortalityRecord {
            county_id: tr.county_id.clone(),
            year: tr.year,
            u5_mortality_per_1000: value.max(0.0),
        });
    }

    Ok(SynthBundle {
        inputs: Inputs {
            plants,
            counties,
            weather,
            grid,
            socio,
            mortality,
        },
        regions: region_map(cfg),
        truth,
        config: cfg.clone(),
    })
}

fn grid_observations(
    cfg: &DgpConfig,
    counties: &[CountyGeometry],
    rows: usize,
    cols: usize,
    truth: &[TruthRow],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GridObservation>> {
    let step = LATTICE_SPACING_DEG / 2.0;
    let mut cells = Vec::new();
    for r in 0..(2 * rows + 1) {
        for c in 0..(2 * cols + 1) {
            let lat = ORIGIN.0 - step + r as f64 * step + step / 2.0;
            let lon = ORIGIN.1 - step + c as f64 * step + step / 2.0;
            cells.push(GeoPoint::new(lat, lon)?);
        }
    }
    let membership = assign_cells(&cells, counties);
    let source: Vec<usize> = cells
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            membership.cell_owner[i].unwrap_or_else(|| {
                counties
                    .iter()
                    .enumerate()
                    .map(|(k, county)| (haversine_km(cell, county.centroid), k))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .map(|(_, k)| k)
                    .expect("counties non-empty")
            })
        })
        .collect();
    let cell_noise = Normal::new(0.0, 0.2 * cfg.noise_sd_pollution)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n_years = cfg.n_years;
    let so2_start = cfg.so2_first_year.unwrap_or(cfg.first_year);
    let mut out = Vec::with_capacity(cells.len() * n_years * 24);
    for t in 0..n_years {
        let year = cfg.first_year + t as i32;
        for month in 1..=12u32 {
            let date = NaiveDate::from_ymd_opt(year, month, 15).expect("valid date");
            let season = (2.0 * std::f64::consts::PI * (month as f64 - 1.0) / 12.0).cos();
            for (i, &cell) in cells.iter().enumerate() {
                let tr = &truth[source[i] * n_years + t];
                if year >= so2_start {
                    out.push(GridObservation {
                        cell_center: cell,
                        date,
                        pollutant: Pollutant::So2Du,
                        value: Some(
                            (tr.so2_planted + 0.03 * season + SO2_SCALE * cell_noise.sample(rng))
                                .max(0.0),
                        ),
                    });
                }
                out.push(GridObservation {
                    cell_center: cell,
                    date,
                    pollutant: Pollutant::Pm25Ugm3,
                    value: Some(
                        (tr.pm25_planted + 8.0 * season + PM_SCALE * cell_noise.sample(rng))
                            .max(0.0),
                    ),
                });
            }
        }
    }
    Ok(out)
}
