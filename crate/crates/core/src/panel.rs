//! County-year analysis table: assembly, fixed-effects demeaning,
//! subsample filters and grouped summary statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::CountyGeometry;
use crate::met::StandardizedYear;
use crate::numeric::{mean, sample_sd, CompensatedSum};
use crate::raster::Pollutant;

/// GDP columns are stored in CNY and rescaled to 10,000 CNY for estimation.
pub const GDP_ESTIMATION_SCALE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityRecord {
    pub county_id: String,
    pub year: i32,
    pub u5_mortality_per_1000: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocioRecord {
    pub county_id: String,
    pub year: i32,
    pub prim_gdp_pc_cny: f64,
    pub sec_gdp_pc_cny: f64,
    pub hospital_beds_per_10k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountyYearRow {
    pub county_id: String,
    pub province_id: String,
    pub year: i32,
    pub mortality_per_1000: f64,
    pub so2_du: Option<f64>,
    pub pm25: Option<f64>,
    pub prim_gdp_pc: f64,
    pub sec_gdp_pc: f64,
    pub hospital_beds_per_10k: f64,
    pub z_temp: [f64; 12],
    pub z_rh: [f64; 12],
}

impl CountyYearRow {
    pub fn pollutant(&self, p: Pollutant) -> Option<f64> {
        match p {
            Pollutant::So2Du => self.so2_du,
            Pollutant::Pm25Ugm3 => self.pm25,
        }
    }

    pub fn key(&self) -> (String, i32) {
        (self.county_id.clone(), self.year)
    }

    pub fn validate(&self) -> Result<()> {
        if self.county_id.is_empty() || self.province_id.is_empty() {
            return Err(Error::InvalidInput(
                "panel row with empty identifier".into(),
            ));
        }
        if !(self.mortality_per_1000.is_finite() && self.mortality_per_1000 >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "mortality for ({}, {}) must be finite and non-negative",
                self.county_id, self.year
            )));
        }
        Ok(())
    }
}

/// Diagnostics from the inner join.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinReport {
    pub mortality_keys: usize,
    pub socio_keys: usize,
    pub weather_keys: usize,
    pub joined: usize,
    pub missing_so2: usize,
    pub missing_pm25: usize,
}

fn index_unique<'a, T>(
    source: &str,
    items: &'a [T],
    key: impl Fn(&'a T) -> (&'a str, i32),
) -> Result<BTreeMap<(&'a str, i32), &'a T>> {
    let mut map = BTreeMap::new();
    for item in items {
        let k = key(item);
        if map.insert(k, item).is_some() {
            return Err(Error::DuplicateKey {
                source_name: source.to_string(),
                county_id: k.0.to_string(),
                year: k.1,
            });
        }
    }
    Ok(map)
}

/// Inner join of mortality, socio-economics and standardised weather on
/// `(county_id, year)`, restricted to counties with geometry. Pollutants are
/// attached where available; rows lacking a pollutant stay in the panel and
/// are dropped per model. Rows come out sorted by `(county_id, year)`.
pub fn assemble(
    mortality: &[MortalityRecord],
    socio: &[SocioRecord],
    weather: &[StandardizedYear],
    so2: &BTreeMap<(String, i32), f64>,
    pm25: &BTreeMap<(String, i32), f64>,
    counties: &[CountyGeometry],
) -> Result<(Vec<CountyYearRow>, JoinReport)> {
    let mort = index_unique("mortality", mortality, |r| (r.county_id.as_str(), r.year))?;
    let soc = index_unique("socio", socio, |r| (r.county_id.as_str(), r.year))?;
    let wx = index_unique("weather", weather, |r| (r.county_id.as_str(), r.year))?;
    let mut province: HashMap<&str, &str> = HashMap::new();
    for c in counties {
        if province
            .insert(c.county_id.as_str(), c.province_id.as_str())
            .is_some()
        {
            return Err(Error::DuplicateKey {
                source_name: "counties".into(),
                county_id: c.county_id.clone(),
                year: 0,
            });
        }
    }

    let mut report = JoinReport {
        mortality_keys: mort.len(),
        socio_keys: soc.len(),
        weather_keys: wx.len(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (&(county, year), m) in &mort {
        let (Some(s), Some(w), Some(prov)) = (
            soc.get(&(county, year)),
            wx.get(&(county, year)),
            province.get(county),
        ) else {
            continue;
        };
        let key = (county.to_string(), year);
        let row = CountyYearRow {
            county_id: county.to_string(),
            province_id: prov.to_string(),
            year,
            mortality_per_1000: m.u5_mortality_per_1000,
            so2_du: so2.get(&key).copied(),
            pm25: pm25.get(&key).copied(),
            prim_gdp_pc: s.prim_gdp_pc_cny,
            sec_gdp_pc: s.sec_gdp_pc_cny,
            hospital_beds_per_10k: s.hospital_beds_per_10k,
            z_temp: w.z_temp,
            z_rh: w.z_rh,
        };
        row.validate()?;
        report.missing_so2 += row.so2_du.is_none() as usize;
        report.missing_pm25 += row.pm25.is_none() as usize;
        rows.push(row);
    }
    report.joined = rows.len();
    Ok((rows, report))
}

/// Indices of rows with every listed pollutant present.
pub fn model_sample(rows: &[CountyYearRow], endogenous: &[Pollutant]) -> Vec<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| endogenous.iter().all(|&p| r.pollutant(p).is_some()))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffect {
    County,
    Year,
    ProvinceXYear,
}

impl fmt::Display for FixedEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixedEffect::County => "county",
            FixedEffect::Year => "year",
            FixedEffect::ProvinceXYear => "province_x_year",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffectsPlan {
    pub effects: Vec<FixedEffect>,
}

impl Default for FixedEffectsPlan {
    fn default() -> Self {
        Self {
            effects: vec![FixedEffect::County, FixedEffect::Year],
        }
    }
}

impl FixedEffectsPlan {
    pub fn validate(&self) -> Result<()> {
        if self.effects.is_empty() {
            return Err(Error::InvalidInput(
                "fixed-effects plan needs at least one effect".into(),
            ));
        }
        let unique: BTreeSet<_> = self.effects.iter().collect();
        if unique.len() != self.effects.len() {
            return Err(Error::InvalidInput("duplicate fixed effect in plan".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.effects
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Dense group labels per effect for the given rows.
    pub fn labels(&self, rows: &[&CountyYearRow]) -> GroupLabels {
        let effects = self
            .effects
            .iter()
            .map(|e| {
                dense_labels(rows.iter().map(|r| match e {
                    FixedEffect::County => r.county_id.clone(),
                    FixedEffect::Year => r.year.to_string(),
                    FixedEffect::ProvinceXYear => format!("{}|{}", r.province_id, r.year),
                }))
            })
            .collect();
        GroupLabels { effects }
    }
}

/// Dense `0..k` labels assigned in sorted order of the raw labels.
pub fn dense_labels<I: IntoIterator<Item = String>>(raw: I) -> Vec<usize> {
    let raw: Vec<String> = raw.into_iter().collect();
    let levels: BTreeSet<&String> = raw.iter().collect();
    let index: HashMap<&String, usize> = levels
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    raw.iter().map(|l| index[l]).collect()
}

/// Group labels for each absorbed effect, aligned to matrix rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLabels {
    pub effects: Vec<Vec<usize>>,
}

impl GroupLabels {
    pub fn n_levels(&self) -> Vec<usize> {
        self.effects
            .iter()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
            .collect()
    }
}

pub const DEMEAN_TOL: f64 = 1e-10;
pub const DEMEAN_MAX_SWEEPS: usize = 100;

fn group_means(values: &[f64], labels: &[usize], n_levels: usize) -> Vec<f64> {
    let mut sums = vec![CompensatedSum::new(); n_levels];
    let mut counts = vec![0usize; n_levels];
    for (&v, &g) in values.iter().zip(labels) {
        sums[g].add(v);
        counts[g] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s.value() / n as f64 } else { 0.0 })
        .collect()
}

/// Within transformation of one column by alternating projections.
pub fn demean_column(values: &[f64], labels: &GroupLabels) -> Result<Vec<f64>> {
    let levels = labels.n_levels();
    for l in &labels.effects {
        if l.len() != values.len() {
            return Err(Error::InvalidInput(
                "group labels do not match column length".into(),
            ));
        }
    }
    let mut x = values.to_vec();
    let mut delta = f64::INFINITY;
    for _ in 0..DEMEAN_MAX_SWEEPS {
        delta = 0.0;
        for (effect, &k) in labels.effects.iter().zip(&levels) {
            let means = group_means(&x, effect, k);
            delta = means.iter().fold(delta, |d, m| d.max(m.abs()));
            for (v, &g) in x.iter_mut().zip(effect) {
                *v -= means[g];
            }
        }
        if delta < DEMEAN_TOL {
            return Ok(x);
        }
    }
    Err(Error::DemeanConvergence {
        sweeps: DEMEAN_MAX_SWEEPS,
        delta,
    })
}

/// Demean every column; columns are independent, so the result does not
/// depend on how the work is split.
pub fn demean(columns: &[Vec<f64>], labels: &GroupLabels) -> Result<Vec<Vec<f64>>> {
    columns
        .par_iter()
        .map(|c| demean_column(c, labels))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    East,
    Northwest,
    Southwest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyZone {
    #[serde(rename = "ARCZ")]
    Arcz,
    #[serde(rename = "SO2CZ")]
    So2cz,
    #[serde(rename = "NPS")]
    Nps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvinceTags {
    #[serde(default)]
    pub regions: BTreeSet<Region>,
    pub zone: PolicyZone,
}

/// Province to region/zone membership. A province may belong to several
/// regions but exactly one policy zone.
pub type RegionMap = BTreeMap<String, ProvinceTags>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubsampleSelector {
    All,
    Region(Region),
    Zone(PolicyZone),
}

impl SubsampleSelector {
    pub fn label(&self) -> String {
        match self {
            SubsampleSelector::All => "all".into(),
            SubsampleSelector::Region(r) => format!("{r:?}"),
            SubsampleSelector::Zone(z) => match z {
                PolicyZone::Arcz => "ARCZ".into(),
                PolicyZone::So2cz => "SO2CZ".into(),
                PolicyZone::Nps => "NPS".into(),
            },
        }
    }

    fn matches(&self, tags: &ProvinceTags) -> bool {
        match self {
            SubsampleSelector::All => true,
            SubsampleSelector::Region(r) => tags.regions.contains(r),
            SubsampleSelector::Zone(z) => tags.zone == *z,
        }
    }
}

impl FromStr for SubsampleSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" | "none" | "" => Ok(SubsampleSelector::All),
            "east" => Ok(SubsampleSelector::Region(Region::East)),
            "northwest" => Ok(SubsampleSelector::Region(Region::Northwest)),
            "southwest" => Ok(SubsampleSelector::Region(Region::Southwest)),
            "arcz" => Ok(SubsampleSelector::Zone(PolicyZone::Arcz)),
            "so2cz" => Ok(SubsampleSelector::Zone(PolicyZone::So2cz)),
            "nps" => Ok(SubsampleSelector::Zone(PolicyZone::Nps)),
            other => Err(Error::InvalidInput(format!("unknown subsample '{other}'"))),
        }
    }
}

pub fn filter_subsample(
    rows: &[CountyYearRow],
    selector: SubsampleSelector,
    regions: &RegionMap,
) -> Result<Vec<CountyYearRow>> {
    if selector == SubsampleSelector::All {
        return Ok(rows.to_vec());
    }
    let mut out = Vec::new();
    for r in rows {
        let tags = regions.get(&r.province_id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "province {} missing from region map",
                r.province_id
            ))
        })?;
        if selector.matches(tags) {
            out.push(r.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySubsample(selector.label()));
    }
    Ok(out)
}

/// Named panel variables available to `summarize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PanelVariable {
    Mortality,
    So2,
    Pm25,
    PrimGdp,
    SecGdp,
    HospitalBeds,
}

impl PanelVariable {
    pub const ALL: [PanelVariable; 6] = [
        PanelVariable::Mortality,
        PanelVariable::So2,
        PanelVariable::Pm25,
        PanelVariable::PrimGdp,
        PanelVariable::SecGdp,
        PanelVariable::HospitalBeds,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PanelVariable::Mortality => "u5_mortality_per_1000",
            PanelVariable::So2 => "so2_du",
            PanelVariable::Pm25 => "pm25_ugm3",
            PanelVariable::PrimGdp => "prim_gdp_pc_cny",
            PanelVariable::SecGdp => "sec_gdp_pc_cny",
            PanelVariable::HospitalBeds => "hospital_beds_per_10k",
        }
    }

    pub fn value(&self, r: &CountyYearRow) -> Option<f64> {
        match self {
            PanelVariable::Mortality => Some(r.mortality_per_1000),
            PanelVariable::So2 => r.so2_du,
            PanelVariable::Pm25 => r.pm25,
            PanelVariable::PrimGdp => Some(r.prim_gdp_pc),
            PanelVariable::SecGdp => Some(r.sec_gdp_pc),
            PanelVariable::HospitalBeds => Some(r.hospital_beds_per_10k),
        }
    }
}

impl FromStr for PanelVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PanelVariable::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown panel variable '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub year: i32,
    pub variable: PanelVariable,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

/// Per-year mean and sample sd; missing values are skipped.
pub fn summarize(rows: &[CountyYearRow], variables: &[PanelVariable]) -> Vec<SummaryRow> {
    let mut by_year: BTreeMap<i32, Vec<&CountyYearRow>> = BTreeMap::new();
    for r in rows {
        by_year.entry(r.year).or_default().push(r);
    }
    let mut out = Vec::new();
    for (year, group) in by_year {
        for &v in variables {
            let mut vals: Vec<f64> = group.iter().filter_map(|r| v.value(r)).collect();
            vals.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                year,
                variable: v,
                n: vals.len(),
                mean: mean(&vals),
                sd: sample_sd(&vals),
            });
        }
    }
    out
}
