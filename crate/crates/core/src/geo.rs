//! Geodesic primitives on a spherical Earth.
//!
//! Distances use the haversine formula with the IUGG mean radius. Directions
//! are expressed in a local east-north tangent plane: bearing 0 points north,
//! 90 east. Polygon membership treats longitude/latitude as planar
//! coordinates, which is adequate at county scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IUGG mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let ok = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if ok {
            Ok(Self { lat, lon })
        } else {
            Err(Error::InvalidCoordinate { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    // Order the endpoints so d(a, b) and d(b, a) evaluate identically.
    let (a, b) = if (a.lat, a.lon) <= (b.lat, b.lon) {
        (a, b)
    } else {
        (b, a)
    };
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Unit vector `(east, north)` for a compass bearing in degrees.
pub fn direction_unit_vector(bearing_deg: f64) -> (f64, f64) {
    let (s, c) = bearing_deg.to_radians().sin_cos();
    (s, c)
}

/// Initial great-circle bearing from `from` towards `to`, in `[0, 360)`.
pub fn initial_bearing_deg(from: GeoPoint, to: GeoPoint) -> Result<f64> {
    if from == to {
        return Err(Error::DegenerateBearing);
    }
    let phi1 = from.lat.to_radians();
    let phi2 = to.lat.to_radians();
    let dlambda = (to.lon - from.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    if y == 0.0 && x == 0.0 {
        return Err(Error::DegenerateBearing);
    }
    Ok(normalize_degrees(y.atan2(x).to_degrees()))
}

/// Point reached by travelling `distance_km` along the great circle that
/// leaves `from` on `bearing_deg`.
pub fn destination_point(from: GeoPoint, bearing_deg: f64, distance_km: f64) -> Result<GeoPoint> {
    let delta = distance_km / EARTH_RADIUS_KM;
    let theta = bearing_deg.to_radians();
    let phi1 = from.lat.to_radians();
    let lambda1 = from.lon.to_radians();
    let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos();
    let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);
    let lon = (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint::new(phi2.to_degrees(), lon)
}

pub(crate) fn normalize_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Simple polygon with an implicitly closed ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    ring: Vec<GeoPoint>,
}

impl Polygon {
    pub fn new(mut ring: Vec<GeoPoint>) -> Result<Self> {
        if ring.len() >= 2 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "ring needs at least 3 distinct vertices, got {}",
                ring.len()
            )));
        }
        let poly = Self { ring };
        if poly.signed_area().abs() <= f64::EPSILON {
            return Err(Error::InvalidPolygon("ring has zero area".into()));
        }
        Ok(poly)
    }

    pub fn ring(&self) -> &[GeoPoint] {
        &self.ring
    }

    /// Shoelace area in squared degrees (lon/lat plane).
    pub fn signed_area(&self) -> f64 {
        let n = self.ring.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.ring[i];
            let b = self.ring[(i + 1) % n];
            acc += a.lon * b.lat - b.lon * a.lat;
        }
        acc / 2.0
    }

    /// Vertex-average centre; used when a county has no explicit centroid.
    pub fn vertex_mean(&self) -> GeoPoint {
        let n = self.ring.len() as f64;
        let lat = self.ring.iter().map(|p| p.lat).sum::<f64>() / n;
        let lon = self.ring.iter().map(|p| p.lon).sum::<f64>() / n;
        GeoPoint { lat, lon }
    }

    /// Bounding box `(min_lat, min_lon, max_lat, max_lon)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.ring.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), p| (a.min(p.lat), b.min(p.lon), c.max(p.lat), d.max(p.lon)),
        )
    }
}

/// County boundary with its reference centroid and province.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyGeometry {
    pub county_id: String,
    pub province_id: String,
    pub centroid: GeoPoint,
    pub polygon: Polygon,
}

const EDGE_EPS: f64 = 1e-12;

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let (px, py) = (p.lon, p.lat);
    let (ax, ay) = (a.lon, a.lat);
    let (bx, by) = (b.lon, b.lat);
    let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    let scale = ((bx - ax).abs() + (by - ay).abs()).max(1.0);
    if cross.abs() > EDGE_EPS * scale {
        return false;
    }
    px >= ax.min(bx) - EDGE_EPS
        && px <= ax.max(bx) + EDGE_EPS
        && py >= ay.min(by) - EDGE_EPS
        && py <= ay.max(by) + EDGE_EPS
}

/// Planar ray-casting membership; points on an edge count as inside.
pub fn point_in_polygon(p: GeoPoint, poly: &Polygon) -> bool {
    let ring = &poly.ring;
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x_cross = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
            if p.lon < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
