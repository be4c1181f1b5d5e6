use plantiv_core::met::{
    build_baseline, relative_humidity, standardize_years, wind_speed_dir, BaselineOptions,
    MonthlyWeather,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn history(rng: &mut ChaCha8Rng, counties: usize) -> Vec<MonthlyWeather> {
    let mut out = Vec::new();
    for c in 0..counties {
        for year in 1950..=1999 {
            for month in 1..=12u32 {
                let t = 5.0 + 20.0 * ((month as f64 - 1.0) / 11.0) + rng.random_range(-4.0..4.0);
                let dew = t - rng.random_range(0.5..12.0);
                out.push(MonthlyWeather {
                    county_id: format!("C{c}"),
                    year,
                    month,
                    t2m_c: t,
                    dewpoint_c: dew,
                    precip_mm: rng.random_range(0.0..200.0),
                    u10: rng.random_range(-5.0..5.0),
                    v10: rng.random_range(-5.0..5.0),
                    u100: rng.random_range(-8.0..8.0),
                    v100: rng.random_range(-8.0..8.0),
                });
            }
        }
    }
    out
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, sd)
}

#[test]
fn baseline_window_standardizes_to_zero_mean_unit_sd() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let hist = history(&mut rng, 4);
    let base = build_baseline(&hist, &BaselineOptions::default()).unwrap();
    let (years, skipped) = standardize_years(&hist, &base, 1950..=1999).unwrap();
    assert!(skipped.is_empty());
    for c in 0..4 {
        let id = format!("C{c}");
        for m in 0..12 {
            let zt: Vec<f64> = years
                .iter()
                .filter(|y| y.county_id == id)
                .map(|y| y.z_temp[m])
                .collect();
            let zr: Vec<f64> = years
                .iter()
                .filter(|y| y.county_id == id)
                .map(|y| y.z_rh[m])
                .collect();
            assert_eq!(zt.len(), 50);
            for z in [zt, zr] {
                let (mean, sd) = moments(&z);
                assert!(mean.abs() <= 1e-9, "mean {mean}");
                assert!((sd - 1.0).abs() <= 1e-9, "sd {sd}");
            }
        }
    }
}

#[test]
fn wind_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10_000 {
        let u: f64 = rng.random_range(-30.0..30.0);
        let v: f64 = rng.random_range(-30.0..30.0);
        let w = wind_speed_dir(u, v);
        let dir = w.dir_from_deg.unwrap().to_radians();
        let (ru, rv) = (-w.speed * dir.sin(), -w.speed * dir.cos());
        assert!(
            (ru - u).abs() <= 1e-9 && (rv - v).abs() <= 1e-9,
            "({u},{v}) -> ({ru},{rv})"
        );
    }
}

#[test]
fn direction_convention_examples() {
    let south = wind_speed_dir(0.0, 1.0);
    assert_eq!((south.speed, south.dir_from_deg), (1.0, Some(180.0)));
    let west = wind_speed_dir(1.0, 0.0);
    assert_eq!((west.speed, west.dir_from_deg), (1.0, Some(270.0)));
    let w = wind_speed_dir(3.0, 4.0);
    let oracle = (270.0 - 4f64.atan2(3.0).to_degrees()).rem_euclid(360.0);
    assert_eq!(w.speed, 5.0);
    assert!((w.dir_from_deg.unwrap() - oracle).abs() < 1e-9);
    assert!((oracle - 216.87).abs() < 0.01);
}

#[test]
fn humidity_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..2000 {
        let t: f64 = rng.random_range(-30.0..45.0);
        let d1 = t - rng.random_range(0.5..25.0);
        let d2 = d1 + rng.random_range(0.01..(t - d1));
        assert!(relative_humidity(t, d2).unwrap() >= relative_humidity(t, d1).unwrap());
        let t2 = t + rng.random_range(0.01..5.0);
        assert!(relative_humidity(t2, d1).unwrap() <= relative_humidity(t, d1).unwrap());
    }
}
