//! Gridded pollutant observations aggregated to county means.
//!
//! Cells are assigned to counties by centre-in-polygon. Daily values are
//! averaged over member cells, then over days within a month, then over
//! available months within a year.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, point_in_polygon, CountyGeometry, GeoPoint};
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    So2Du,
    Pm25Ugm3,
}

impl Pollutant {
    pub fn code(&self) -> &'static str {
        match self {
            Pollutant::So2Du => "SO2_DU",
            Pollutant::Pm25Ugm3 => "PM25_UGM3",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Pollutant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SO2_DU" => Ok(Pollutant::So2Du),
            "PM25_UGM3" => Ok(Pollutant::Pm25Ugm3),
            other => Err(Error::InvalidInput(format!("unknown pollutant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridObservation {
    pub cell_center: GeoPoint,
    pub date: NaiveDate,
    pub pollutant: Pollutant,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountyPollutant {
    pub county_id: String,
    pub year: i32,
    /// `None` for the annual mean.
    pub month: Option<u32>,
    pub pollutant: Pollutant,
    pub mean_value: Option<f64>,
    /// Cell-day observations behind the value.
    pub n_obs: usize,
    /// Set when no valid observation was available.
    pub flagged: bool,
}

fn cell_key(p: GeoPoint) -> (u64, u64) {
    (p.lat().to_bits(), p.lon().to_bits())
}

/// Distinct cell centres in a deterministic order.
pub fn unique_cells(obs: &[GridObservation]) -> Vec<GeoPoint> {
    let mut cells: Vec<GeoPoint> = obs.iter().map(|o| o.cell_center).collect();
    cells.sort_by(|a, b| {
        a.lat()
            .total_cmp(&b.lat())
            .then(a.lon().total_cmp(&b.lon()))
    });
    cells.dedup_by_key(|c| cell_key(*c));
    cells
}

/// Cell-to-county assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub cells: Vec<GeoPoint>,
    /// County index owning each cell by centre-in-polygon.
    pub cell_owner: Vec<Option<usize>>,
    /// Cells feeding each county, including fallback assignments.
    pub county_cells: Vec<Vec<usize>>,
    /// Counties that received their nearest cell because none fell inside.
    pub fallback: Vec<bool>,
    index: HashMap<(u64, u64), usize>,
}

impl Membership {
    pub fn cell_index(&self, p: GeoPoint) -> Option<usize> {
        self.index.get(&cell_key(p)).copied()
    }
}

/// Assign cells to the first county (input order) whose polygon contains the
/// cell centre. Counties left without a cell fall back to the cell nearest
/// their centroid.
pub fn assign_cells(cells: &[GeoPoint], counties: &[CountyGeometry]) -> Membership {
    let boxes: Vec<_> = counties.iter().map(|c| c.polygon.bbox()).collect();
    let mut cell_owner = vec![None; cells.len()];
    let mut county_cells = vec![Vec::new(); counties.len()];
    for (i, &cell) in cells.iter().enumerate() {
        let owner = counties.iter().enumerate().find(|(k, county)| {
            let (a, b, c, d) = boxes[*k];
            cell.lat() >= a
                && cell.lat() <= c
                && cell.lon() >= b
                && cell.lon() <= d
                && point_in_polygon(cell, &county.polygon)
        });
        if let Some((k, _)) = owner {
            cell_owner[i] = Some(k);
            county_cells[k].push(i);
        }
    }
    let mut fallback = vec![false; counties.len()];
    if !cells.is_empty() {
        for (k, county) in counties.iter().enumerate() {
            if county_cells[k].is_empty() {
                let nearest = cells
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| (haversine_km(county.centroid, c), i))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .map(|(_, i)| i)
                    .expect("non-empty cells");
                county_cells[k].push(nearest);
                fallback[k] = true;
            }
        }
    }
    let index = cells
        .iter()
        .enumerate()
        .map(|(i, &c)| (cell_key(c), i))
        .collect();
    Membership {
        cells: cells.to_vec(),
        cell_owner,
        county_cells,
        fallback,
        index,
    }
}

#[derive(Default)]
struct Acc {
    sum: CompensatedSum,
    n: usize,
}

impl Acc {
    fn push(&mut self, x: f64) {
        self.sum.add(x);
        self.n += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum.value() / self.n as f64)
    }
}

/// County monthly and annual means. Monthly rows are emitted for every
/// pollutant-month present anywhere in `obs`; county-months without data are
/// flagged with a missing value. Output is sorted by county, pollutant, year,
/// then month with the annual row last.
pub fn county_means(
    obs: &[GridObservation],
    membership: &Membership,
    counties: &[CountyGeometry],
) -> Result<Vec<CountyPollutant>> {
    if membership.county_cells.len() != counties.len() {
        return Err(Error::InvalidInput(
            "membership does not cover the county list".into(),
        ));
    }
    let mut cell_counties: Vec<Vec<usize>> = vec![Vec::new(); membership.cells.len()];
    for (k, cells) in membership.county_cells.iter().enumerate() {
        for &c in cells {
            cell_counties[c].push(k);
        }
    }

    let mut months: BTreeSet<(Pollutant, i32, u32)> = BTreeSet::new();
    let mut daily: HashMap<(usize, Pollutant, NaiveDate), Acc> = HashMap::new();
    for o in obs {
        months.insert((o.pollutant, o.date.year(), o.date.month()));
        let Some(v) = o.value else { continue };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid value {v} at ({}, {}) on {} must be non-negative",
                o.cell_center.lat(),
                o.cell_center.lon(),
                o.date
            )));
        }
        let Some(cell) = membership.cell_index(o.cell_center) else {
            continue;
        };
        for &k in &cell_counties[cell] {
            daily.entry((k, o.pollutant, o.date)).or_default().push(v);
        }
    }

    // (county, pollutant, year, month) -> (mean of day means, cell-day count)
    let mut monthly: HashMap<(usize, Pollutant, i32, u32), (Acc, usize)> = HashMap::new();
    let mut days: Vec<_> = daily.into_iter().collect();
    days.sort_by(|a, b| a.0.cmp(&b.0));
    for ((k, pol, date), acc) in days {
        let day_mean = acc.mean().expect("non-empty day");
        let entry = monthly
            .entry((k, pol, date.year(), date.month()))
            .or_default();
        entry.0.push(day_mean);
        entry.1 += acc.n;
    }

    let mut order: Vec<usize> = (0..counties.len()).collect();
    order.sort_by(|&a, &b| counties[a].county_id.cmp(&counties[b].county_id));
    let pollutants: BTreeSet<Pollutant> = months.iter().map(|m| m.0).collect();

    let mut out = Vec::new();
    for &k in &order {
        let county_id = &counties[k].county_id;
        for &pol in &pollutants {
            let years: BTreeSet<i32> = months.iter().filter(|m| m.0 == pol).map(|m| m.1).collect();
            for year in years {
                let mut annual = Acc::default();
                let mut annual_obs = 0;
                for &(_, _, month) in months.range((pol, year, 1)..=(pol, year, 12)) {
                    let (mean_value, n_obs) = match monthly.get(&(k, pol, year, month)) {
                        Some((acc, n)) => (acc.mean(), *n),
                        None => (None, 0),
                    };
                    if let Some(m) = mean_value {
                        annual.push(m);
                        annual_obs += n_obs;
                    }
                    out.push(CountyPollutant {
                        county_id: county_id.clone(),
                        year,
                        month: Some(month),
                        pollutant: pol,
                        mean_value,
                        n_obs,
                        flagged: mean_value.is_none(),
                    });
                }
                let mean_value = annual.mean();
                out.push(CountyPollutant {
                    county_id: county_id.clone(),
                    year,
                    month: None,
                    pollutant: pol,
                    mean_value,
                    n_obs: annual_obs,
                    flagged: mean_value.is_none(),
                });
            }
        }
    }
    Ok(out)
}

/// Annual means keyed by `(county_id, year)` for one pollutant.
pub fn annual_means(
    rows: &[CountyPollutant],
    pollutant: Pollutant,
) -> BTreeMap<(String, i32), f64> {
    rows.iter()
        .filter(|r| r.pollutant == pollutant && r.month.is_none())
        .filter_map(|r| r.mean_value.map(|v| ((r.county_id.clone(), r.year), v)))
        .collect()
}
