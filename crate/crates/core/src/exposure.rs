//! Policy-exposure instrument candidates.
//!
//! Each county-year receives sums of retired generating capacity over radius
//! bands, lags and capacity classes, optionally weighted by inverse distance
//! and by the alignment of the plant-to-county direction with the county's
//! annual mean wind (the cos α projection). FGD-installation exposures and
//! monthly 100 m wind columns complete the candidate set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{
    direction_unit_vector, haversine_km, initial_bearing_deg, CountyGeometry, GeoPoint,
};
use crate::met::{wind_speed_dir, MonthlyWeather};
use crate::numeric::CompensatedSum;

/// Weight-denominator floor in kilometres.
pub const DISTANCE_FLOOR_KM: f64 = 1.0;
/// Radius used for FGD exposures.
pub const FGD_RADIUS_KM: f64 = 100.0;
pub const MAX_LAG_YEARS: u32 = 3;
pub const SMALL_UNIT_CAP_MW: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantUnit {
    pub unit_id: String,
    pub location: GeoPoint,
    pub capacity_mw: f64,
    /// `None` when the unit was commissioned before the directory window.
    pub commission_year: Option<i32>,
    pub retire_year: Option<i32>,
    pub retire_month: Option<u32>,
    pub fgd_install_year: Option<i32>,
    pub so2_removed_10kt: Option<f64>,
}

impl PlantUnit {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidPlant {
                unit_id: self.unit_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.unit_id.is_empty() {
            return bad("empty unit_id");
        }
        if !(self.capacity_mw.is_finite() && self.capacity_mw > 0.0) {
            return bad("capacity_mw must be positive");
        }
        if let (Some(c), Some(r)) = (self.commission_year, self.retire_year) {
            if r < c {
                return bad("retire_year precedes commission_year");
            }
        }
        if let Some(m) = self.retire_month {
            if !(1..=12).contains(&m) {
                return bad("retire_month outside 1..12");
            }
        }
        if let Some(s) = self.so2_removed_10kt {
            if self.fgd_install_year.is_none() {
                return bad("so2_removed_10kt without fgd_install_year");
            }
            if !(s.is_finite() && s >= 0.0) {
                return bad("so2_removed_10kt must be non-negative");
            }
        }
        Ok(())
    }
}

fn plant_order(a: &PlantUnit, b: &PlantUnit) -> Ordering {
    a.unit_id
        .cmp(&b.unit_id)
        .then(a.location.lat().total_cmp(&b.location.lat()))
        .then(a.location.lon().total_cmp(&b.location.lon()))
        .then(a.capacity_mw.total_cmp(&b.capacity_mw))
        .then(a.retire_year.cmp(&b.retire_year))
        .then(a.fgd_install_year.cmp(&b.fgd_install_year))
}

/// Distance band `(inner, outer]` in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusBand {
    inner_km: f64,
    outer_km: f64,
}

impl RadiusBand {
    pub fn new(inner_km: f64, outer_km: f64) -> Result<Self> {
        if !(inner_km >= 0.0 && outer_km > inner_km && outer_km.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "band {inner_km}-{outer_km} km needs 0 <= inner < outer"
            )));
        }
        Ok(Self { inner_km, outer_km })
    }

    pub fn inner_km(&self) -> f64 {
        self.inner_km
    }

    pub fn outer_km(&self) -> f64 {
        self.outer_km
    }

    /// Half-open membership so adjacent annuli partition exactly. A plant
    /// at zero distance belongs to bands starting at zero.
    pub fn contains(&self, d_km: f64) -> bool {
        (d_km > self.inner_km || (self.inner_km == 0.0 && d_km == 0.0)) && d_km <= self.outer_km
    }

    pub fn default_set() -> Vec<RadiusBand> {
        [
            (0.0, 25.0),
            (0.0, 50.0),
            (0.0, 100.0),
            (25.0, 100.0),
            (50.0, 100.0),
        ]
        .iter()
        .map(|&(i, o)| RadiusBand::new(i, o).expect("static band"))
        .collect()
    }
}

/// Distance weighting applied to plant capacity.
pub trait DistanceKernel: Send + Sync {
    fn name(&self) -> &str;
    /// Weight for a plant at `d_km`; the distance is already floored.
    fn weight(&self, d_km: f64) -> f64;
}

#[derive(Clone)]
pub enum Kernel {
    InverseDistance,
    Custom(Arc<dyn DistanceKernel>),
}

impl Kernel {
    fn weight(&self, d_km: f64) -> f64 {
        let d = d_km.max(DISTANCE_FLOOR_KM);
        match self {
            Kernel::InverseDistance => 1.0 / d,
            Kernel::Custom(k) => k.weight(d),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Kernel::InverseDistance => "idw",
            Kernel::Custom(k) => k.name(),
        }
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kernel({})", self.name())
    }
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureSpec {
    pub band: RadiusBand,
    pub lag_years: u32,
    pub capacity_cap_mw: Option<f64>,
    pub weighted: bool,
    pub kernel: Kernel,
}

impl ExposureSpec {
    pub fn new(
        band: RadiusBand,
        lag_years: u32,
        capacity_cap_mw: Option<f64>,
        weighted: bool,
    ) -> Result<Self> {
        let spec = Self {
            band,
            lag_years,
            capacity_cap_mw,
            weighted,
            kernel: Kernel::InverseDistance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag_years > MAX_LAG_YEARS {
            return Err(Error::InvalidSpec(format!(
                "lag {} outside allowed range [0,{MAX_LAG_YEARS}]",
                self.lag_years
            )));
        }
        if let Some(cap) = self.capacity_cap_mw {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "capacity cap {cap} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Stable column name, e.g. `ret_w_0_100km_le50_lag2`.
    pub fn column_name(&self) -> String {
        let w = if self.weighted {
            match &self.kernel {
                Kernel::InverseDistance => "w".to_string(),
                Kernel::Custom(k) => format!("w{}", k.name()),
            }
        } else {
            "u".to_string()
        };
        let cap = match self.capacity_cap_mw {
            None => "all".to_string(),
            Some(c) => format!("le{}", fmt_num(c)),
        };
        format!(
            "ret_{w}_{}_{}km_{cap}_lag{}",
            fmt_num(self.band.inner_km),
            fmt_num(self.band.outer_km),
            self.lag_years
        )
    }
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}").replace('.', "p")
    }
}

/// Annual wind axis for one county-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyWind {
    pub county_id: String,
    pub year: i32,
    pub mean_u: f64,
    pub mean_v: f64,
}

/// Vector mean of monthly 100 m `(u, v)` per county-year.
pub fn annual_wind(weather: &[MonthlyWeather]) -> Vec<CountyWind> {
    let mut acc: BTreeMap<(&str, i32), Vec<(u32, f64, f64)>> = BTreeMap::new();
    for w in weather {
        acc.entry((w.county_id.as_str(), w.year))
            .or_default()
            .push((w.month, w.u100, w.v100));
    }
    acc.into_iter()
        .map(|((county, year), mut months)| {
            months.sort_by(|a, b| a.partial_cmp(b).expect("finite wind"));
            let n = months.len() as f64;
            let mean_u = months
                .iter()
                .map(|m| m.1)
                .collect::<CompensatedSum>()
                .value()
                / n;
            let mean_v = months
                .iter()
                .map(|m| m.2)
                .collect::<CompensatedSum>()
                .value()
                / n;
            CountyWind {
                county_id: county.to_string(),
                year,
                mean_u,
                mean_v,
            }
        })
        .collect()
}

fn flow_unit(wind: &CountyWind) -> Result<(f64, f64)> {
    let norm = wind.mean_u.hypot(wind.mean_v);
    if !(norm > 0.0) {
        return Err(Error::ZeroWind {
            county_id: wind.county_id.clone(),
            year: wind.year,
        });
    }
    Ok((wind.mean_u / norm, wind.mean_v / norm))
}

/// Projection of the plant-to-county direction onto the wind flow.
/// `Ok(None)` marks a downwind plant. A plant at the centroid is treated as
/// fully upwind.
pub fn upwind_cosine(
    plant: GeoPoint,
    county_centroid: GeoPoint,
    wind: &CountyWind,
) -> Result<Option<f64>> {
    let flow = flow_unit(wind)?;
    let to_plant = match initial_bearing_deg(county_centroid, plant) {
        Ok(b) => Some(direction_unit_vector(b)),
        Err(Error::DegenerateBearing) => None,
        Err(e) => return Err(e),
    };
    Ok(project(to_plant, flow))
}

fn project(centroid_to_plant: Option<(f64, f64)>, flow: (f64, f64)) -> Option<f64> {
    let Some((e, n)) = centroid_to_plant else {
        return Some(1.0);
    };
    // Plant-to-centroid is the reverse of centroid-to-plant.
    let c = -(e * flow.0 + n * flow.1);
    if c >= 0.0 {
        Some(c.min(1.0))
    } else {
        None
    }
}

#[derive(Debug, Clone)]
struct Neighbor {
    plant: usize,
    distance_km: f64,
    /// `None` when the plant sits on the centroid.
    to_plant: Option<(f64, f64)>,
}

/// Plants within reach of one county, precomputed once and reused for every
/// year and spec.
#[derive(Debug, Clone)]
pub struct CountyNeighborhood<'a> {
    plants: Vec<&'a PlantUnit>,
    neighbors: Vec<Neighbor>,
}

impl<'a> CountyNeighborhood<'a> {
    pub fn new(county: &CountyGeometry, plants: &'a [PlantUnit], reach_km: f64) -> Self {
        let mut sorted: Vec<&PlantUnit> = plants.iter().collect();
        sorted.sort_by(|a, b| plant_order(a, b));
        let neighbors = sorted
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d = haversine_km(county.centroid, p.location);
                (d <= reach_km).then(|| Neighbor {
                    plant: i,
                    distance_km: d,
                    to_plant: initial_bearing_deg(county.centroid, p.location)
                        .ok()
                        .map(direction_unit_vector),
                })
            })
            .collect();
        Self {
            plants: sorted,
            neighbors,
        }
    }

    pub fn weighted_sum(&self, wind: &CountyWind, spec: &ExposureSpec, year: i32) -> Result<f64> {
        let target = year - spec.lag_years as i32;
        let flow = if spec.weighted {
            Some(flow_unit(wind)?)
        } else {
            None
        };
        let mut acc = CompensatedSum::new();
        for nb in &self.neighbors {
            let p = self.plants[nb.plant];
            if p.retire_year != Some(target) || !spec.band.contains(nb.distance_km) {
                continue;
            }
            if matches!(spec.capacity_cap_mw, Some(cap) if p.capacity_mw > cap) {
                continue;
            }
            match flow {
                None => acc.add(p.capacity_mw),
                Some(f) => {
                    if let Some(cos_alpha) = project(nb.to_plant, f) {
                        acc.add(p.capacity_mw * cos_alpha * spec.kernel.weight(nb.distance_km));
                    }
                }
            }
        }
        Ok(acc.value())
    }

    pub fn fgd_exposures(&self, year: i32, lag: u32) -> (f64, f64) {
        let target = year - lag as i32;
        let mut cap = CompensatedSum::new();
        let mut so2 = CompensatedSum::new();
        for nb in &self.neighbors {
            let p = self.plants[nb.plant];
            if nb.distance_km <= FGD_RADIUS_KM && p.fgd_install_year == Some(target) {
                cap.add(p.capacity_mw);
                so2.add(p.so2_removed_10kt.unwrap_or(0.0));
            }
        }
        (cap.value(), so2.value())
    }
}

/// Capacity exposure of one county for one spec and year.
pub fn weighted_sum(
    plants: &[PlantUnit],
    county: &CountyGeometry,
    wind: &CountyWind,
    spec: &ExposureSpec,
    year: i32,
) -> Result<f64> {
    spec.validate()?;
    CountyNeighborhood::new(county, plants, spec.band.outer_km).weighted_sum(wind, spec, year)
}

/// Operating capacity (MW) and SO2 removal (10 kt) of units that installed
/// FGD in `year - lag` within 100 km of the centroid.
pub fn fgd_exposures(
    plants: &[PlantUnit],
    county: &CountyGeometry,
    year: i32,
    lag: u32,
) -> Result<(f64, f64)> {
    if lag > MAX_LAG_YEARS {
        return Err(Error::InvalidSpec(format!(
            "lag {lag} outside allowed range [0,{MAX_LAG_YEARS}]"
        )));
    }
    Ok(CountyNeighborhood::new(county, plants, FGD_RADIUS_KM).fgd_exposures(year, lag))
}

/// Candidate instrument grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureGrid {
    pub capacity_specs: Vec<ExposureSpec>,
    pub fgd_lags: Vec<u32>,
    pub wind_columns: bool,
    /// First year covered by the plant directory; earlier lag targets contribute 0.
    pub data_start_year: Option<i32>,
}

impl ExposureGrid {
    pub fn full(
        bands: &[RadiusBand],
        lags: &[u32],
        caps: &[Option<f64>],
        weighting: &[bool],
    ) -> Result<Self> {
        let mut capacity_specs = Vec::new();
        for &band in bands {
            for &weighted in weighting {
                for &cap in caps {
                    for &lag in lags {
                        capacity_specs.push(ExposureSpec::new(band, lag, cap, weighted)?);
                    }
                }
            }
        }
        for &lag in lags {
            if lag > MAX_LAG_YEARS {
                return Err(Error::InvalidSpec(format!(
                    "lag {lag} outside allowed range [0,{MAX_LAG_YEARS}]"
                )));
            }
        }
        Ok(Self {
            capacity_specs,
            fgd_lags: lags.to_vec(),
            wind_columns: true,
            data_start_year: Some(2000),
        })
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols: Vec<String> = self
            .capacity_specs
            .iter()
            .map(ExposureSpec::column_name)
            .collect();
        for &lag in &self.fgd_lags {
            cols.push(format!("fgd_cap_lag{lag}"));
            cols.push(format!("fgd_so2_lag{lag}"));
        }
        if self.wind_columns {
            for m in 1..=12 {
                cols.push(format!("ws100_m{m:02}"));
            }
            for m in 1..=12 {
                cols.push(format!("wd100_m{m:02}"));
            }
        }
        cols
    }

    fn max_reach_km(&self) -> f64 {
        let band_max = self
            .capacity_specs
            .iter()
            .map(|s| s.band.outer_km)
            .fold(0.0, f64::max);
        if self.fgd_lags.is_empty() {
            band_max
        } else {
            band_max.max(FGD_RADIUS_KM)
        }
    }
}

impl Default for ExposureGrid {
    fn default() -> Self {
        Self::full(
            &RadiusBand::default_set(),
            &[0, 1, 2, 3],
            &[None, Some(SMALL_UNIT_CAP_MW)],
            &[true, false],
        )
        .expect("default grid is valid")
    }
}

/// Candidate instruments, one row per county-year, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMatrix {
    pub columns: Vec<String>,
    pub keys: Vec<(String, i32)>,
    values: Vec<f64>,
}

impl InstrumentMatrix {
    pub fn new(columns: Vec<String>, keys: Vec<(String, i32)>, values: Vec<f64>) -> Result<Self> {
        if values.len() != columns.len() * keys.len() {
            return Err(Error::AlignmentError(format!(
                "{} values for {} rows x {} columns",
                values.len(),
                keys.len(),
                columns.len()
            )));
        }
        let unique: BTreeSet<&String> = columns.iter().collect();
        if unique.len() != columns.len() {
            return Err(Error::InvalidInput(
                "duplicate instrument column name".into(),
            ));
        }
        Ok(Self {
            columns,
            keys,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_cols();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    /// Rows reordered to `keys`; every key must be present exactly once.
    pub fn aligned_to(&self, keys: &[(String, i32)]) -> Result<InstrumentMatrix> {
        let index: BTreeMap<(&str, i32), usize> = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, (c, y))| ((c.as_str(), *y), i))
            .collect();
        if index.len() != self.keys.len() {
            return Err(Error::AlignmentError(
                "duplicate county-year in instrument matrix".into(),
            ));
        }
        let mut values = Vec::with_capacity(keys.len() * self.n_cols());
        for (c, y) in keys {
            let i = index.get(&(c.as_str(), *y)).ok_or_else(|| {
                Error::AlignmentError(format!("no instrument row for ({c}, {y})"))
            })?;
            values.extend_from_slice(self.row(*i));
        }
        InstrumentMatrix::new(self.columns.clone(), keys.to_vec(), values)
    }
}

/// Build every candidate column for every county-year in `years`.
///
/// Rows are ordered by `(county_id, year)`. Calm months get a zero wind
/// direction plus a `wd100_mXX_calm` indicator column, added only for
/// months where calm wind occurs.
pub fn build_instrument_matrix(
    plants: &[PlantUnit],
    counties: &[CountyGeometry],
    weather: &[MonthlyWeather],
    years: std::ops::RangeInclusive<i32>,
    grid: &ExposureGrid,
) -> Result<InstrumentMatrix> {
    for p in plants {
        p.validate()?;
    }
    for s in &grid.capacity_specs {
        s.validate()?;
    }

    let mut monthly: BTreeMap<(&str, i32), [Option<(f64, f64)>; 12]> = BTreeMap::new();
    for w in weather.iter().filter(|w| years.contains(&w.year)) {
        if !(1..=12).contains(&w.month) {
            return Err(Error::InvalidInput(format!(
                "weather month {} outside 1..12",
                w.month
            )));
        }
        monthly
            .entry((w.county_id.as_str(), w.year))
            .or_insert([None; 12])[(w.month - 1) as usize] = Some((w.u100, w.v100));
    }

    let mut sorted_counties: Vec<&CountyGeometry> = counties.iter().collect();
    sorted_counties.sort_by(|a, b| a.county_id.cmp(&b.county_id));
    let reach = grid.max_reach_km();

    struct Row {
        key: (String, i32),
        values: Vec<f64>,
        calm: [bool; 12],
    }

    let rows: Vec<Row> = sorted_counties
        .par_iter()
        .map(|county| -> Result<Vec<Row>> {
            let hood = CountyNeighborhood::new(county, plants, reach);
            let mut out = Vec::new();
            for year in years.clone() {
                let missing = || Error::MissingWind {
                    county_id: county.county_id.clone(),
                    year,
                };
                let months = monthly
                    .get(&(county.county_id.as_str(), year))
                    .ok_or_else(missing)?;
                if months.iter().any(Option::is_none) {
                    return Err(missing());
                }
                let uv: Vec<(f64, f64)> = months.iter().map(|m| m.expect("checked")).collect();
                let wind = CountyWind {
                    county_id: county.county_id.clone(),
                    year,
                    mean_u: uv.iter().map(|x| x.0).collect::<CompensatedSum>().value() / 12.0,
                    mean_v: uv.iter().map(|x| x.1).collect::<CompensatedSum>().value() / 12.0,
                };
                let in_window =
                    |lag: u32| grid.data_start_year.is_none_or(|s| year - lag as i32 >= s);
                let mut values = Vec::new();
                for spec in &grid.capacity_specs {
                    values.push(if in_window(spec.lag_years) {
                        hood.weighted_sum(&wind, spec, year)?
                    } else {
                        0.0
                    });
                }
                for &lag in &grid.fgd_lags {
                    let (cap, so2) = if in_window(lag) {
                        hood.fgd_exposures(year, lag)
                    } else {
                        (0.0, 0.0)
                    };
                    values.push(cap);
                    values.push(so2);
                }
                let mut calm = [false; 12];
                if grid.wind_columns {
                    let sd: Vec<_> = uv.iter().map(|&(u, v)| wind_speed_dir(u, v)).collect();
                    values.extend(sd.iter().map(|w| w.speed));
                    for (m, w) in sd.iter().enumerate() {
                        calm[m] = w.is_calm();
                        values.push(w.dir_from_deg.unwrap_or(0.0));
                    }
                }
                out.push(Row {
                    key: (county.county_id.clone(), year),
                    values,
                    calm,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut columns = grid.column_names();
    let calm_months: Vec<usize> = (0..12)
        .filter(|&m| rows.iter().any(|r| r.calm[m]))
        .collect();
    for &m in &calm_months {
        columns.push(format!("wd100_m{:02}_calm", m + 1));
    }
    let mut keys = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * columns.len());
    for row in rows {
        keys.push(row.key);
        values.extend(row.values);
        values.extend(
            calm_months
                .iter()
                .map(|&m| if row.calm[m] { 1.0 } else { 0.0 }),
        );
    }
    InstrumentMatrix::new(columns, keys, values)
}
