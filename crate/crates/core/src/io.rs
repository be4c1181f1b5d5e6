//! CSV readers and writers for every pipeline file.
//!
//! All files are UTF-8 with a header row, `.` decimals and ISO dates.
//! Missing numeric cells are empty fields. Headers must match exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::error::{Error, Result};
use crate::exposure::{InstrumentMatrix, PlantUnit};
use crate::geo::{CountyGeometry, GeoPoint, Polygon};
use crate::met::MonthlyWeather;
use crate::panel::{
    CountyYearRow, MortalityRecord, PolicyZone, ProvinceTags, Region, RegionMap, SocioRecord,
};
use crate::raster::{CountyPollutant, GridObservation, Pollutant};

pub const PLANTS_HEADER: [&str; 9] = [
    "unit_id",
    "lat",
    "lon",
    "capacity_mw",
    "commission_year",
    "retire_year",
    "retire_month",
    "fgd_install_year",
    "so2_removed_10kt",
];
pub const COUNTIES_HEADER: [&str; 5] = [
    "county_id",
    "province_id",
    "centroid_lat",
    "centroid_lon",
    "polygon_wkt_like",
];
pub const MORTALITY_HEADER: [&str; 3] = ["county_id", "year", "u5_mortality_per_1000"];
pub const WEATHER_HEADER: [&str; 10] = [
    "county_id",
    "year",
    "month",
    "t2m_c",
    "dewpoint_c",
    "precip_mm",
    "u10",
    "v10",
    "u100",
    "v100",
];
pub const GRID_HEADER: [&str; 5] = ["cell_lat", "cell_lon", "date", "pollutant", "value"];
pub const SOCIO_HEADER: [&str; 5] = [
    "county_id",
    "year",
    "prim_gdp_pc_cny",
    "sec_gdp_pc_cny",
    "hospital_beds_per_10k",
];
pub const REGIONS_HEADER: [&str; 3] = ["province_id", "regions", "zone"];
pub const COUNTY_POLLUTION_HEADER: [&str; 7] = [
    "county_id",
    "year",
    "month",
    "pollutant",
    "mean_value",
    "n_obs",
    "flagged",
];

pub fn panel_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "county_id",
        "province_id",
        "year",
        "u5_mortality_per_1000",
        "so2_du",
        "pm25_ugm3",
        "prim_gdp_pc_cny",
        "sec_gdp_pc_cny",
        "hospital_beds_per_10k",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=12).map(|m| format!("z_temp_m{m:02}")));
    h.extend((1..=12).map(|m| format!("z_rh_m{m:02}")));
    h
}

struct Field<'a> {
    source: &'a str,
    line: u64,
    rec: &'a StringRecord,
}

impl Field<'_> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.source.to_string(),
            line: self.line,
            message,
        }
    }

    fn raw(&self, i: usize, name: &str) -> Result<&str> {
        self.rec
            .get(i)
            .map(str::trim)
            .ok_or_else(|| self.err(format!("missing field `{name}`")))
    }

    fn text(&self, i: usize, name: &str) -> Result<String> {
        let v = self.raw(i, name)?;
        if v.is_empty() {
            return Err(self.err(format!("`{name}` is empty")));
        }
        Ok(v.to_string())
    }

    fn opt<T: FromStr>(&self, i: usize, name: &str) -> Result<Option<T>> {
        let v = self.raw(i, name)?;
        if v.is_empty() {
            return Ok(None);
        }
        v.parse::<T>()
            .map(Some)
            .map_err(|_| self.err(format!("`{name}` has invalid value `{v}`")))
    }

    fn req<T: FromStr>(&self, i: usize, name: &str) -> Result<T> {
        self.opt(i, name)?
            .ok_or_else(|| self.err(format!("`{name}` is empty")))
    }

    fn finite(&self, i: usize, name: &str) -> Result<f64> {
        let v: f64 = self.req(i, name)?;
        if !v.is_finite() {
            return Err(self.err(format!("`{name}` must be finite")));
        }
        Ok(v)
    }

    fn opt_finite(&self, i: usize, name: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.opt(i, name)?;
        if matches!(v, Some(x) if !x.is_finite()) {
            return Err(self.err(format!("`{name}` must be finite")));
        }
        Ok(v)
    }

    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Parse { .. } => e,
            other => self.err(other.to_string()),
        })
    }
}

/// Parse a CSV whose header must equal `header`, applying `row` to every
/// record.
fn parse<R: Read, T>(
    reader: R,
    source: &str,
    header: &[&str],
    mut row: impl FnMut(&Field) -> Result<T>,
) -> Result<Vec<T>> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let found = rdr.headers().map_err(|e| csv_err(source, e))?.clone();
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != header {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(row(&Field {
            source,
            line,
            rec: &rec,
        })?);
    }
    Ok(out)
}

fn csv_err(source: &str, e: csv::Error) -> Error {
    Error::Parse {
        path: source.to_string(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt_num<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_rows<W: Write>(
    w: W,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut wtr = WriterBuilder::new().from_writer(w);
    let io = |e: csv::Error| Error::Io {
        path: "<output>".into(),
        message: e.to_string(),
    };
    wtr.write_record(header).map_err(io)?;
    for r in rows {
        wtr.write_record(&r).map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: "<output>".into(),
        message: e.to_string(),
    })
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

pub fn parse_plants<R: Read>(r: R, source: &str) -> Result<Vec<PlantUnit>> {
    parse(r, source, &PLANTS_HEADER, |f| {
        let plant = PlantUnit {
            unit_id: f.text(0, "unit_id")?,
            location: f.wrap(GeoPoint::new(f.finite(1, "lat")?, f.finite(2, "lon")?))?,
            capacity_mw: f.finite(3, "capacity_mw")?,
            commission_year: f.opt(4, "commission_year")?,
            retire_year: f.opt(5, "retire_year")?,
            retire_month: f.opt(6, "retire_month")?,
            fgd_install_year: f.opt(7, "fgd_install_year")?,
            so2_removed_10kt: f.opt_finite(8, "so2_removed_10kt")?,
        };
        f.wrap(plant.validate())?;
        Ok(plant)
    })
}

pub fn write_plants<W: Write>(w: W, plants: &[PlantUnit]) -> Result<()> {
    write_rows(
        w,
        &strings(&PLANTS_HEADER),
        plants.iter().map(|p| {
            vec![
                p.unit_id.clone(),
                num(p.location.lat()),
                num(p.location.lon()),
                num(p.capacity_mw),
                opt_num(p.commission_year),
                opt_num(p.retire_year),
                opt_num(p.retire_month),
                opt_num(p.fgd_install_year),
                opt_num(p.so2_removed_10kt),
            ]
        }),
    )
}

/// Ring text `lon lat; lon lat; ...`.
pub fn format_ring(poly: &Polygon) -> String {
    poly.ring()
        .iter()
        .map(|p| format!("{} {}", p.lon(), p.lat()))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn parse_ring(text: &str) -> Result<Polygon> {
    let mut ring = Vec::new();
    for pair in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = pair.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::InvalidPolygon(format!(
                "vertex `{pair}` is not `lon lat`"
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidPolygon(format!("bad coordinate `{s}`")))
        };
        ring.push(GeoPoint::new(parse(parts[1])?, parse(parts[0])?)?);
    }
    Polygon::new(ring)
}

pub fn parse_counties<R: Read>(r: R, source: &str) -> Result<Vec<CountyGeometry>> {
    let counties = parse(r, source, &COUNTIES_HEADER, |f| {
        Ok(CountyGeometry {
            county_id: f.text(0, "county_id")?,
            province_id: f.text(1, "province_id")?,
            centroid: f.wrap(GeoPoint::new(
                f.finite(2, "centroid_lat")?,
                f.finite(3, "centroid_lon")?,
            ))?,
            polygon: f.wrap(parse_ring(f.raw(4, "polygon_wkt_like")?))?,
        })
    })?;
    let mut seen = BTreeSet::new();
    for c in &counties {
        if !seen.insert(&c.county_id) {
            return Err(Error::InvalidInput(format!(
                "{source}: duplicate county_id {}",
                c.county_id
            )));
        }
    }
    Ok(counties)
}

pub fn write_counties<W: Write>(w: W, counties: &[CountyGeometry]) -> Result<()> {
    write_rows(
        w,
        &strings(&COUNTIES_HEADER),
        counties.iter().map(|c| {
            vec![
                c.county_id.clone(),
                c.province_id.clone(),
                num(c.centroid.lat()),
                num(c.centroid.lon()),
                format_ring(&c.polygon),
            ]
        }),
    )
}

pub fn parse_mortality<R: Read>(r: R, source: &str) -> Result<Vec<MortalityRecord>> {
    parse(r, source, &MORTALITY_HEADER, |f| {
        let v = f.finite(2, "u5_mortality_per_1000")?;
        if v < 0.0 {
            return Err(f.err("u5_mortality_per_1000 must be non-negative".into()));
        }
        Ok(MortalityRecord {
            county_id: f.text(0, "county_id")?,
            year: f.req(1, "year")?,
            u5_mortality_per_1000: v,
        })
    })
}

pub fn write_mortality<W: Write>(w: W, rows: &[MortalityRecord]) -> Result<()> {
    write_rows(
        w,
        &strings(&MORTALITY_HEADER),
        rows.iter().map(|r| {
            vec![
                r.county_id.clone(),
                r.year.to_string(),
                num(r.u5_mortality_per_1000),
            ]
        }),
    )
}

pub fn parse_weather<R: Read>(r: R, source: &str) -> Result<Vec<MonthlyWeather>> {
    parse(r, source, &WEATHER_HEADER, |f| {
        let w = MonthlyWeather {
            county_id: f.text(0, "county_id")?,
            year: f.req(1, "year")?,
            month: f.req(2, "month")?,
            t2m_c: f.finite(3, "t2m_c")?,
            dewpoint_c: f.finite(4, "dewpoint_c")?,
            precip_mm: f.finite(5, "precip_mm")?,
            u10: f.finite(6, "u10")?,
            v10: f.finite(7, "v10")?,
            u100: f.finite(8, "u100")?,
            v100: f.finite(9, "v100")?,
        };
        f.wrap(w.validate())?;
        Ok(w)
    })
}

pub fn write_weather<W: Write>(w: W, rows: &[MonthlyWeather]) -> Result<()> {
    write_rows(
        w,
        &strings(&WEATHER_HEADER),
        rows.iter().map(|r| {
            vec![
                r.county_id.clone(),
                r.year.to_string(),
                r.month.to_string(),
                num(r.t2m_c),
                num(r.dewpoint_c),
                num(r.precip_mm),
                num(r.u10),
                num(r.v10),
                num(r.u100),
                num(r.v100),
            ]
        }),
    )
}

pub fn parse_grid<R: Read>(r: R, source: &str) -> Result<Vec<GridObservation>> {
    parse(r, source, &GRID_HEADER, |f| {
        let date_text = f.text(2, "date")?;
        let date = NaiveDate::parse_from_str(&date_text, "%Y-%m-%d")
            .map_err(|_| f.err(format!("`date` is not an ISO date: `{date_text}`")))?;
        let pollutant: Pollutant = f.wrap(f.text(3, "pollutant")?.parse())?;
        Ok(GridObservation {
            cell_center: f.wrap(GeoPoint::new(
                f.finite(0, "cell_lat")?,
                f.finite(1, "cell_lon")?,
            ))?,
            date,
            pollutant,
            value: f.opt_finite(4, "value")?,
        })
    })
}

pub fn write_grid<W: Write>(w: W, rows: &[GridObservation]) -> Result<()> {
    write_rows(
        w,
        &strings(&GRID_HEADER),
        rows.iter().map(|o| {
            vec![
                num(o.cell_center.lat()),
                num(o.cell_center.lon()),
                o.date.format("%Y-%m-%d").to_string(),
                o.pollutant.code().to_string(),
                opt_num(o.value),
            ]
        }),
    )
}

pub fn parse_socio<R: Read>(r: R, source: &str) -> Result<Vec<SocioRecord>> {
    parse(r, source, &SOCIO_HEADER, |f| {
        Ok(SocioRecord {
            county_id: f.text(0, "county_id")?,
            year: f.req(1, "year")?,
            prim_gdp_pc_cny: f.finite(2, "prim_gdp_pc_cny")?,
            sec_gdp_pc_cny: f.finite(3, "sec_gdp_pc_cny")?,
            hospital_beds_per_10k: f.finite(4, "hospital_beds_per_10k")?,
        })
    })
}

pub fn write_socio<W: Write>(w: W, rows: &[SocioRecord]) -> Result<()> {
    write_rows(
        w,
        &strings(&SOCIO_HEADER),
        rows.iter().map(|r| {
            vec![
                r.county_id.clone(),
                r.year.to_string(),
                num(r.prim_gdp_pc_cny),
                num(r.sec_gdp_pc_cny),
                num(r.hospital_beds_per_10k),
            ]
        }),
    )
}

fn region_code(r: Region) -> &'static str {
    match r {
        Region::East => "east",
        Region::Northwest => "northwest",
        Region::Southwest => "southwest",
    }
}

fn zone_code(z: PolicyZone) -> &'static str {
    match z {
        PolicyZone::Arcz => "ARCZ",
        PolicyZone::So2cz => "SO2CZ",
        PolicyZone::Nps => "NPS",
    }
}

/// Region map rows: `regions` is a `|`-separated list (possibly empty),
/// `zone` one of `ARCZ`, `SO2CZ`, `NPS`.
pub fn parse_regions<R: Read>(r: R, source: &str) -> Result<RegionMap> {
    let rows = parse(r, source, &REGIONS_HEADER, |f| {
        let province = f.text(0, "province_id")?;
        let mut regions = BTreeSet::new();
        for tag in f
            .raw(1, "regions")?
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let region = match tag.to_ascii_lowercase().as_str() {
                "east" => Region::East,
                "northwest" => Region::Northwest,
                "southwest" => Region::Southwest,
                other => return Err(f.err(format!("unknown region `{other}`"))),
            };
            regions.insert(region);
        }
        let zone = match f.text(2, "zone")?.to_ascii_uppercase().as_str() {
            "ARCZ" => PolicyZone::Arcz,
            "SO2CZ" => PolicyZone::So2cz,
            "NPS" => PolicyZone::Nps,
            other => return Err(f.err(format!("unknown policy zone `{other}`"))),
        };
        Ok((f.line, province, ProvinceTags { regions, zone }))
    })?;
    let mut map = BTreeMap::new();
    for (line, province, tags) in rows {
        if map.insert(province.clone(), tags).is_some() {
            return Err(Error::Parse {
                path: source.to_string(),
                line,
                message: format!("province {province} listed twice"),
            });
        }
    }
    Ok(map)
}

pub fn write_regions<W: Write>(w: W, map: &RegionMap) -> Result<()> {
    write_rows(
        w,
        &strings(&REGIONS_HEADER),
        map.iter().map(|(p, t)| {
            vec![
                p.clone(),
                t.regions
                    .iter()
                    .map(|r| region_code(*r))
                    .collect::<Vec<_>>()
                    .join("|"),
                zone_code(t.zone).to_string(),
            ]
        }),
    )
}

pub fn write_instruments<W: Write>(w: W, m: &InstrumentMatrix) -> Result<()> {
    let mut header = vec!["county_id".to_string(), "year".to_string()];
    header.extend(m.columns.iter().cloned());
    write_rows(
        w,
        &header,
        (0..m.n_rows()).map(|i| {
            let (c, y) = &m.keys[i];
            let mut row = vec![c.clone(), y.to_string()];
            row.extend(m.row(i).iter().map(|v| num(*v)));
            row
        }),
    )
}

pub fn parse_instruments<R: Read>(r: R, source: &str) -> Result<InstrumentMatrix> {
    let mut rdr = ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers().map_err(|e| csv_err(source, e))?.clone();
    if header.len() < 2 || &header[0] != "county_id" || &header[1] != "year" {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            message: "instrument file must start with `county_id,year`".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let f = Field {
            source,
            line: rec.position().map_or(0, |p| p.line()),
            rec: &rec,
        };
        keys.push((f.text(0, "county_id")?, f.req(1, "year")?));
        for (j, name) in columns.iter().enumerate() {
            values.push(f.finite(j + 2, name)?);
        }
    }
    InstrumentMatrix::new(columns, keys, values)
}

pub fn write_panel<W: Write>(w: W, rows: &[CountyYearRow]) -> Result<()> {
    write_rows(
        w,
        &panel_header(),
        rows.iter().map(|r| {
            let mut v = vec![
                r.county_id.clone(),
                r.province_id.clone(),
                r.year.to_string(),
                num(r.mortality_per_1000),
                opt_num(r.so2_du),
                opt_num(r.pm25),
                num(r.prim_gdp_pc),
                num(r.sec_gdp_pc),
                num(r.hospital_beds_per_10k),
            ];
            v.extend(r.z_temp.iter().map(|x| num(*x)));
            v.extend(r.z_rh.iter().map(|x| num(*x)));
            v
        }),
    )
}

pub fn parse_panel<R: Read>(r: R, source: &str) -> Result<Vec<CountyYearRow>> {
    let header = panel_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    parse(r, source, &header, |f| {
        let mut z_temp = [0.0; 12];
        let mut z_rh = [0.0; 12];
        for m in 0..12 {
            z_temp[m] = f.finite(9 + m, "z_temp")?;
            z_rh[m] = f.finite(21 + m, "z_rh")?;
        }
        let row = CountyYearRow {
            county_id: f.text(0, "county_id")?,
            province_id: f.text(1, "province_id")?,
            year: f.req(2, "year")?,
            mortality_per_1000: f.finite(3, "u5_mortality_per_1000")?,
            so2_du: f.opt_finite(4, "so2_du")?,
            pm25: f.opt_finite(5, "pm25_ugm3")?,
            prim_gdp_pc: f.finite(6, "prim_gdp_pc_cny")?,
            sec_gdp_pc: f.finite(7, "sec_gdp_pc_cny")?,
            hospital_beds_per_10k: f.finite(8, "hospital_beds_per_10k")?,
            z_temp,
            z_rh,
        };
        f.wrap(row.validate())?;
        Ok(row)
    })
}

pub fn write_county_pollution<W: Write>(w: W, rows: &[CountyPollutant]) -> Result<()> {
    write_rows(
        w,
        &strings(&COUNTY_POLLUTION_HEADER),
        rows.iter().map(|r| {
            vec![
                r.county_id.clone(),
                r.year.to_string(),
                opt_num(r.month),
                r.pollutant.code().to_string(),
                opt_num(r.mean_value),
                r.n_obs.to_string(),
                r.flagged.to_string(),
            ]
        }),
    )
}

/// Generic table writer for reports built elsewhere.
pub fn write_table<W: Write>(
    w: W,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    write_rows(w, &strings(header), rows)
}
