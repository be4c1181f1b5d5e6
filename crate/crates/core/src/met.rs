//! Meteorological preprocessing: wind components, relative humidity and
//! standardisation of monthly weather against a historical baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::normalize_degrees;
use crate::numeric::{mean, sample_sd};

const MAGNUS_A: f64 = 17.625;
const MAGNUS_B: f64 = 243.04;

/// Dew points may exceed air temperature by this much before a record is rejected.
pub const DEWPOINT_TOLERANCE_C: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyWeather {
    pub county_id: String,
    pub year: i32,
    pub month: u32,
    pub t2m_c: f64,
    pub dewpoint_c: f64,
    pub precip_mm: f64,
    pub u10: f64,
    pub v10: f64,
    pub u100: f64,
    pub v100: f64,
}

impl MonthlyWeather {
    pub fn validate(&self) -> Result<()> {
        if !(1..=12).contains(&self.month) {
            return Err(Error::InvalidInput(format!(
                "weather {} {}: month {} outside 1..12",
                self.county_id, self.year, self.month
            )));
        }
        if self.dewpoint_c > self.t2m_c + DEWPOINT_TOLERANCE_C {
            return Err(Error::InvalidInput(format!(
                "weather {} {}-{:02}: dew point {} exceeds temperature {}",
                self.county_id, self.year, self.month, self.dewpoint_c, self.t2m_c
            )));
        }
        if self.precip_mm < 0.0 {
            return Err(Error::InvalidInput(format!(
                "weather {} {}-{:02}: negative precipitation",
                self.county_id, self.year, self.month
            )));
        }
        let all_finite = [
            self.t2m_c,
            self.dewpoint_c,
            self.precip_mm,
            self.u10,
            self.v10,
            self.u100,
            self.v100,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput(format!(
                "weather {} {}-{:02}: non-finite field",
                self.county_id, self.year, self.month
            )));
        }
        Ok(())
    }

    pub fn relative_humidity(&self) -> Result<f64> {
        relative_humidity(self.t2m_c, self.dewpoint_c)
    }
}

/// Wind speed and meteorological direction derived from `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindSpeedDir {
    pub speed: f64,
    /// Direction the wind blows from, degrees clockwise from north.
    /// `None` for calm wind.
    pub dir_from_deg: Option<f64>,
}

impl WindSpeedDir {
    pub fn is_calm(&self) -> bool {
        self.dir_from_deg.is_none()
    }
}

/// Positive `u` is wind from the west, positive `v` wind from the south.
pub fn wind_speed_dir(u: f64, v: f64) -> WindSpeedDir {
    let speed = u.hypot(v);
    if speed == 0.0 {
        return WindSpeedDir {
            speed,
            dir_from_deg: None,
        };
    }
    let dir = normalize_degrees(270.0 - v.atan2(u).to_degrees());
    WindSpeedDir {
        speed,
        dir_from_deg: Some(dir),
    }
}

/// Magnus-formula relative humidity in percent, clamped to 100.
pub fn relative_humidity(t_c: f64, dew_c: f64) -> Result<f64> {
    if t_c <= -MAGNUS_B || dew_c <= -MAGNUS_B {
        return Err(Error::OutOfRange(t_c.min(dew_c)));
    }
    let dew = dew_c.min(t_c);
    let rh = 100.0 * (MAGNUS_A * dew / (MAGNUS_B + dew) - MAGNUS_A * t_c / (MAGNUS_B + t_c)).exp();
    Ok(rh.min(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WeatherField {
    Temperature,
    Humidity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub mean_t: f64,
    pub sd_t: f64,
    pub mean_rh: f64,
    pub sd_rh: f64,
    pub n_years: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineOptions {
    pub first_year: i32,
    pub last_year: i32,
    pub min_years: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            first_year: 1950,
            last_year: 1999,
            min_years: 30,
        }
    }
}

/// Per county-month historical means and sample standard deviations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Baseline {
    cells: BTreeMap<(String, u32), BaselineCell>,
}

impl Baseline {
    pub fn get(&self, county_id: &str, month: u32) -> Option<&BaselineCell> {
        self.cells.get(&(county_id.to_string(), month))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, u32), &BaselineCell)> {
        self.cells.iter()
    }

    pub fn standardize(
        &self,
        x: f64,
        county_id: &str,
        month: u32,
        field: WeatherField,
    ) -> Result<f64> {
        let cell = self
            .get(county_id, month)
            .ok_or_else(|| Error::MissingBaseline {
                county_id: county_id.to_string(),
                month,
            })?;
        Ok(standardize(x, cell, field))
    }
}

pub fn standardize(x: f64, cell: &BaselineCell, field: WeatherField) -> f64 {
    match field {
        WeatherField::Temperature => (x - cell.mean_t) / cell.sd_t,
        WeatherField::Humidity => (x - cell.mean_rh) / cell.sd_rh,
    }
}

/// Build the baseline from records inside the configured window. Records
/// outside the window are ignored.
pub fn build_baseline(history: &[MonthlyWeather], opts: &BaselineOptions) -> Result<Baseline> {
    // Sort values per cell so the statistics do not depend on record order.
    let mut grouped: BTreeMap<(String, u32), Vec<(i32, f64, f64)>> = BTreeMap::new();
    for rec in history {
        if rec.year < opts.first_year || rec.year > opts.last_year {
            continue;
        }
        rec.validate()?;
        let rh = rec.relative_humidity()?;
        grouped
            .entry((rec.county_id.clone(), rec.month))
            .or_default()
            .push((rec.year, rec.t2m_c, rh));
    }
    let mut cells = BTreeMap::new();
    for ((county_id, month), mut vals) in grouped {
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite weather values"));
        let insufficient = |reason: String| Error::InsufficientBaseline {
            county_id: county_id.clone(),
            month,
            reason,
        };
        let years = {
            let mut ys: Vec<i32> = vals.iter().map(|v| v.0).collect();
            ys.dedup();
            ys.len()
        };
        if years != vals.len() {
            return Err(insufficient("duplicate year in history".into()));
        }
        if years < opts.min_years {
            return Err(insufficient(format!(
                "{years} years available, {} required",
                opts.min_years
            )));
        }
        let temps: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let rhs: Vec<f64> = vals.iter().map(|v| v.2).collect();
        let (mean_t, sd_t) = (mean(&temps).unwrap(), sample_sd(&temps).unwrap_or(0.0));
        let (mean_rh, sd_rh) = (mean(&rhs).unwrap(), sample_sd(&rhs).unwrap_or(0.0));
        if !(sd_t > 0.0 && sd_rh > 0.0) {
            return Err(insufficient("zero standard deviation".into()));
        }
        cells.insert(
            (county_id, month),
            BaselineCell {
                mean_t,
                sd_t,
                mean_rh,
                sd_rh,
                n_years: years,
            },
        );
    }
    Ok(Baseline { cells })
}

/// Standardised temperature and humidity for one county-year.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedYear {
    pub county_id: String,
    pub year: i32,
    pub z_temp: [f64; 12],
    pub z_rh: [f64; 12],
    pub precip_mm: [f64; 12],
}

/// Standardise every county-year in `years` that has all twelve months.
/// County-years with gaps are skipped and reported in the second vector.
pub fn standardize_years(
    records: &[MonthlyWeather],
    baseline: &Baseline,
    years: std::ops::RangeInclusive<i32>,
) -> Result<(Vec<StandardizedYear>, Vec<(String, i32)>)> {
    let mut grouped: BTreeMap<(String, i32), [Option<&MonthlyWeather>; 12]> = BTreeMap::new();
    for rec in records.iter().filter(|r| years.contains(&r.year)) {
        rec.validate()?;
        let slot = &mut grouped
            .entry((rec.county_id.clone(), rec.year))
            .or_insert([None; 12])[(rec.month - 1) as usize];
        if slot.is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate weather record {} {}-{:02}",
                rec.county_id, rec.year, rec.month
            )));
        }
        *slot = Some(rec);
    }
    let mut out = Vec::new();
    let mut incomplete = Vec::new();
    for ((county_id, year), months) in grouped {
        if months.iter().any(Option::is_none) {
            incomplete.push((county_id, year));
            continue;
        }
        let mut z_temp = [0.0; 12];
        let mut z_rh = [0.0; 12];
        let mut precip_mm = [0.0; 12];
        for (m, rec) in months.iter().enumerate() {
            let rec = rec.expect("checked complete");
            let month = m as u32 + 1;
            z_temp[m] =
                baseline.standardize(rec.t2m_c, &county_id, month, WeatherField::Temperature)?;
            z_rh[m] = baseline.standardize(
                rec.relative_humidity()?,
                &county_id,
                month,
                WeatherField::Humidity,
            )?;
            precip_mm[m] = rec.precip_mm;
        }
        out.push(StandardizedYear {
            county_id,
            year,
            z_temp,
            z_rh,
            precip_mm,
        });
    }
    Ok((out, incomplete))
}
