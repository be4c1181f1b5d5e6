use plantiv_core::exposure::{
    build_instrument_matrix, weighted_sum, CountyWind, ExposureGrid, ExposureSpec, PlantUnit,
    RadiusBand,
};
use plantiv_core::geo::{destination_point, haversine_km, CountyGeometry, GeoPoint, Polygon};
use plantiv_core::met::MonthlyWeather;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const YEAR: i32 = 2008;

fn county_at(lat: f64, lon: f64) -> CountyGeometry {
    let h = 0.2;
    let ring = vec![
        GeoPoint::new(lat - h, lon - h).unwrap(),
        GeoPoint::new(lat - h, lon + h).unwrap(),
        GeoPoint::new(lat + h, lon + h).unwrap(),
        GeoPoint::new(lat + h, lon - h).unwrap(),
    ];
    CountyGeometry {
        county_id: "C1".into(),
        province_id: "P1".into(),
        centroid: GeoPoint::new(lat, lon).unwrap(),
        polygon: Polygon::new(ring).unwrap(),
    }
}

fn plant(id: usize, at: GeoPoint, mw: f64, retire: i32) -> PlantUnit {
    PlantUnit {
        unit_id: format!("U{id:03}"),
        location: at,
        capacity_mw: mw,
        commission_year: None,
        retire_year: Some(retire),
        retire_month: Some(6),
        fgd_install_year: None,
        so2_removed_10kt: None,
    }
}

fn wind(u: f64, v: f64) -> CountyWind {
    CountyWind {
        county_id: "C1".into(),
        year: YEAR,
        mean_u: u,
        mean_v: v,
    }
}

fn spec(inner: f64, outer: f64, cap: Option<f64>, weighted: bool) -> ExposureSpec {
    ExposureSpec::new(RadiusBand::new(inner, outer).unwrap(), 0, cap, weighted).unwrap()
}

struct Layout {
    county: CountyGeometry,
    plants: Vec<PlantUnit>,
    wind: CountyWind,
}

fn random_layout(rng: &mut ChaCha8Rng) -> Layout {
    let county = county_at(rng.random_range(22.0..42.0), rng.random_range(100.0..120.0));
    let n = rng.random_range(0..20);
    let plants = (0..n)
        .map(|i| {
            let at = destination_point(
                county.centroid,
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..130.0),
            )
            .unwrap();
            let mw = if rng.random_bool(0.4) {
                rng.random_range(5.0..50.0)
            } else {
                rng.random_range(50.0..800.0)
            };
            plant(i, at, mw, rng.random_range(2006..=2009))
        })
        .collect();
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(0.5..8.0);
    Layout {
        county,
        plants,
        wind: wind(speed * angle.cos(), speed * angle.sin()),
    }
}

/// Contribution oracle: forward azimuth by the standard spherical formula,
/// cosine between the plant-to-centroid direction and the wind flow.
fn oracle_sum(layout: &Layout, inner: f64, outer: f64, cap: Option<f64>, weighted: bool) -> f64 {
    let c = layout.county.centroid;
    let norm = layout.wind.mean_u.hypot(layout.wind.mean_v);
    let (fu, fv) = (layout.wind.mean_u / norm, layout.wind.mean_v / norm);
    let mut total = 0.0;
    for p in &layout.plants {
        if p.retire_year != Some(YEAR) || cap.is_some_and(|k| p.capacity_mw > k) {
            continue;
        }
        let d = haversine_km(c, p.location);
        if !(d > inner && d <= outer) && !(inner == 0.0 && d == 0.0) {
            continue;
        }
        if !weighted {
            total += p.capacity_mw;
            continue;
        }
        let (la1, lo1) = (c.lat().to_radians(), c.lon().to_radians());
        let (la2, lo2) = (p.location.lat().to_radians(), p.location.lon().to_radians());
        let y = (lo2 - lo1).sin() * la2.cos();
        let x = la1.cos() * la2.sin() - la1.sin() * la2.cos() * (lo2 - lo1).cos();
        let theta = y.atan2(x);
        let (east, north) = (theta.sin(), theta.cos());
        let cos_a = -(east * fu + north * fv);
        if cos_a >= 0.0 {
            total += p.capacity_mw * cos_a / d.max(1.0);
        }
    }
    total
}

#[test]
fn band_additivity_on_random_layouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let l = random_layout(&mut rng);
        for weighted in [true, false] {
            for cap in [None, Some(50.0)] {
                let inner = weighted_sum(
                    &l.plants,
                    &l.county,
                    &l.wind,
                    &spec(0.0, 25.0, cap, weighted),
                    YEAR,
                )
                .unwrap();
                let outer = weighted_sum(
                    &l.plants,
                    &l.county,
                    &l.wind,
                    &spec(25.0, 100.0, cap, weighted),
                    YEAR,
                )
                .unwrap();
                let whole = weighted_sum(
                    &l.plants,
                    &l.county,
                    &l.wind,
                    &spec(0.0, 100.0, cap, weighted),
                    YEAR,
                )
                .unwrap();
                assert!(
                    (inner + outer - whole).abs() <= 1e-9,
                    "{inner} + {outer} != {whole}"
                );
            }
        }
    }
}

#[test]
fn weighted_sum_matches_independent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let l = random_layout(&mut rng);
        for (inner, outer) in [(0.0, 100.0), (25.0, 100.0), (50.0, 100.0)] {
            for weighted in [true, false] {
                let got = weighted_sum(
                    &l.plants,
                    &l.county,
                    &l.wind,
                    &spec(inner, outer, None, weighted),
                    YEAR,
                )
                .unwrap();
                let want = oracle_sum(&l, inner, outer, None, weighted);
                assert!(
                    (got - want).abs() <= 1e-9 * want.max(1.0),
                    "{got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn upwind_only_and_weight_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..300 {
        let mut l = random_layout(&mut rng);
        let s = spec(0.0, 100.0, None, true);
        let before = weighted_sum(&l.plants, &l.county, &l.wind, &s, YEAR).unwrap();

        // A downwind plant adds nothing.
        let flow_bearing = l.wind.mean_u.atan2(l.wind.mean_v).to_degrees();
        let downwind =
            destination_point(l.county.centroid, flow_bearing, rng.random_range(2.0..90.0))
                .unwrap();
        l.plants.push(plant(900, downwind, 300.0, YEAR));
        let with_downwind = weighted_sum(&l.plants, &l.county, &l.wind, &s, YEAR).unwrap();
        assert!((with_downwind - before).abs() <= 1e-12);

        // An upwind plant adds at most capacity / max(d, 1), and never reduces the sum.
        let d = rng.random_range(0.0..99.0);
        let upwind = destination_point(
            l.county.centroid,
            flow_bearing + 180.0 + rng.random_range(-80.0..80.0),
            d,
        )
        .unwrap();
        let mw = rng.random_range(10.0..500.0);
        l.plants.push(plant(901, upwind, mw, YEAR));
        let with_upwind = weighted_sum(&l.plants, &l.county, &l.wind, &s, YEAR).unwrap();
        let dist = haversine_km(l.county.centroid, upwind);
        assert!(with_upwind >= with_downwind - 1e-12);
        assert!(with_upwind - with_downwind <= mw / dist.max(1.0) + 1e-9);
    }
}

#[test]
fn under_fifty_never_exceeds_all_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let l = random_layout(&mut rng);
        for weighted in [true, false] {
            for (inner, outer) in [(0.0, 25.0), (0.0, 100.0), (50.0, 100.0)] {
                let small = weighted_sum(
                    &l.plants,
                    &l.county,
                    &l.wind,
                    &spec(inner, outer, Some(50.0), weighted),
                    YEAR,
                )
                .unwrap();
                let all = weighted_sum(
                    &l.plants,
                    &l.county,
                    &l.wind,
                    &spec(inner, outer, None, weighted),
                    YEAR,
                )
                .unwrap();
                assert!(small <= all + 1e-12);
            }
        }
    }
}

#[test]
fn rotation_equivariance_near_the_equator() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let centre = GeoPoint::new(0.0, 110.0).unwrap();
    for _ in 0..200 {
        let placements: Vec<(f64, f64, f64)> = (0..8)
            .map(|_| {
                let mut d: f64 = rng.random_range(1.0..60.0);
                while (d - 25.0).abs() < 0.01 {
                    d += 0.1;
                }
                (
                    rng.random_range(0.0..360.0),
                    d,
                    rng.random_range(10.0..400.0),
                )
            })
            .collect();
        let wind_deg: f64 = rng.random_range(0.0..360.0);
        let rot: f64 = rng.random_range(0.0..360.0);
        let eval = |shift: f64| {
            let county = county_at(0.0, 110.0);
            let plants: Vec<PlantUnit> = placements
                .iter()
                .enumerate()
                .map(|(i, &(b, d, mw))| {
                    plant(
                        i,
                        destination_point(centre, b + shift, d).unwrap(),
                        mw,
                        YEAR,
                    )
                })
                .collect();
            let a = (wind_deg + shift).to_radians();
            let w = wind(3.0 * a.sin(), 3.0 * a.cos());
            [(0.0, 25.0), (0.0, 100.0)].map(|(i, o)| {
                weighted_sum(&plants, &county, &w, &spec(i, o, None, true), YEAR).unwrap()
            })
        };
        let base = eval(0.0);
        let turned = eval(rot);
        for k in 0..2 {
            assert!(
                (base[k] - turned[k]).abs() <= 1e-6,
                "{base:?} vs {turned:?}"
            );
        }
    }
}

fn weather_for(
    county: &str,
    years: std::ops::RangeInclusive<i32>,
    u: f64,
    v: f64,
) -> Vec<MonthlyWeather> {
    years
        .flat_map(|year| {
            (1..=12).map(move |month| MonthlyWeather {
                county_id: county.into(),
                year,
                month,
                t2m_c: 15.0,
                dewpoint_c: 8.0,
                precip_mm: 60.0,
                u10: u,
                v10: v,
                u100: u,
                v100: v,
            })
        })
        .collect()
}

#[test]
fn permuting_plants_leaves_every_cell_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let l = random_layout(&mut rng);
    let mut plants = l.plants.clone();
    for p in plants.iter_mut() {
        p.fgd_install_year = Some(2007);
        p.so2_removed_10kt = Some(0.25);
    }
    let weather = weather_for("C1", 2006..=2010, 2.0, -1.0);
    let counties = vec![l.county.clone()];
    let grid = ExposureGrid::default();
    let a = build_instrument_matrix(&plants, &counties, &weather, 2006..=2010, &grid).unwrap();
    assert!(plants.len() > 2);
    plants.reverse();
    let mid = plants.len() / 2;
    plants.swap(0, mid);
    let b = build_instrument_matrix(&plants, &counties, &weather, 2006..=2010, &grid).unwrap();
    assert_eq!(a, b);
    for i in 0..a.n_rows() {
        for j in 0..a.n_cols() {
            assert_eq!(a.get(i, j).to_bits(), b.get(i, j).to_bits());
        }
    }
}

#[test]
fn single_plant_hand_example() {
    let county = county_at(30.0, 110.0);
    let at = destination_point(county.centroid, 270.0, 50.04).unwrap();
    let p = vec![plant(1, at, 50.0, YEAR)];
    let w = wind(1.0, 0.0);
    let got = weighted_sum(&p, &county, &w, &spec(0.0, 100.0, None, true), YEAR).unwrap();
    assert!((got - 0.9992).abs() < 1e-3, "{got}");
    assert_eq!(
        weighted_sum(&p, &county, &w, &spec(0.0, 100.0, None, false), YEAR).unwrap(),
        50.0
    );
    assert_eq!(
        weighted_sum(&p, &county, &w, &spec(0.0, 25.0, None, true), YEAR).unwrap(),
        0.0
    );
}

#[test]
fn county_without_plants_has_zero_capacity_columns() {
    let weather = weather_for("C1", 2008..=2008, 1.0, 1.0);
    let grid = ExposureGrid::default();
    let m = build_instrument_matrix(&[], &[county_at(30.0, 110.0)], &weather, 2008..=2008, &grid)
        .unwrap();
    assert_eq!(m.n_rows(), 1);
    for j in 0..grid.capacity_specs.len() {
        assert_eq!(m.get(0, j), 0.0);
    }
}
