use nalgebra::{DMatrix, DVector};
use plantiv_core::estimator::lasso::{coordinate_descent, lasso_select, LassoConfig};
use plantiv_core::estimator::ols::{classical_vcov, ols};
use plantiv_core::estimator::vcov::cluster_robust_vcov;
use plantiv_core::estimator::{iv_lasso, IvData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Columns with `X'X = n I` by Gram-Schmidt.
fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for _ in 0..p {
        let mut v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(c) {
                    *a -= dot * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        cols.push(v.iter().map(|a| a / norm).collect());
    }
    let scale = (n as f64).sqrt();
    DMatrix::from_fn(n, p, |i, j| cols[j][i] * scale)
}

#[test]
fn selected_sets_grow_as_the_penalty_falls() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..20 {
        let (n, p) = (200, 10);
        let x = orthonormal_design(&mut rng, n, p);
        let beta: Vec<f64> = (0..p)
            .map(|j| if j < 5 { (j + 1) as f64 * 0.2 } else { 0.0 })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + normal(&mut rng))
            .collect();
        let ones = vec![1.0; p];
        let support = |lambda: f64| -> Vec<usize> {
            let fit = coordinate_descent(&y, &x, lambda, &ones, 10_000, 1e-12).unwrap();
            (0..p).filter(|&j| fit.coef[j] != 0.0).collect()
        };
        let lambdas = [800.0, 400.0, 200.0, 100.0, 50.0, 10.0];
        for w in lambdas.windows(2) {
            let big = support(w[0]);
            let small = support(w[1]);
            assert!(
                big.iter().all(|j| small.contains(j)),
                "{big:?} not within {small:?}"
            );
        }
    }
}

fn iv_fixture(rng: &mut ChaCha8Rng, n: usize, p: usize) -> IvData {
    let z = DMatrix::from_fn(n, p, |_, _| normal(rng));
    let mut d = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let u = normal(rng);
        d[(i, 0)] = 1.0 * z[(i, 0)] + 0.8 * z[(i, 1)] + 0.5 * u + normal(rng);
        y[i] = 0.7 * d[(i, 0)] + u;
    }
    IvData {
        y,
        y_name: "y".into(),
        endog: d,
        endog_names: vec!["d".into()],
        instruments: z,
        instrument_names: (0..p).map(|j| format!("z{j}")).collect(),
        controls: DMatrix::from_element(n, 1, 1.0),
        control_names: vec!["const".into()],
        clusters: (0..n).map(|i| i % 25).collect(),
    }
}

#[test]
fn post_lasso_is_invariant_to_instrument_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..10 {
        let data = iv_fixture(&mut rng, 400, 12);
        let base = iv_lasso(&data, &LassoConfig::default()).unwrap();
        let mut scaled = data.clone();
        let col = rng.random_range(0..12);
        let mut c = scaled.instruments.column_mut(col);
        c *= 10.0;
        let again = iv_lasso(&scaled, &LassoConfig::default()).unwrap();
        assert_eq!(
            base.first_stage[0].selected_instruments,
            again.first_stage[0].selected_instruments
        );
        let (a, b) = (
            base.coefficient("d").unwrap(),
            again.coefficient("d").unwrap(),
        );
        assert!((a.estimate - b.estimate).abs() <= 1e-8);
        assert!((a.std_error - b.std_error).abs() <= 1e-8);
    }
}

fn adjusted_r2(y: &[f64], x: &DMatrix<f64>, subset: &[usize]) -> f64 {
    let n = y.len();
    let mut design = DMatrix::from_element(n, subset.len() + 1, 1.0);
    for (k, &j) in subset.iter().enumerate() {
        design.set_column(k + 1, &x.column(j));
    }
    let names: Vec<String> = (0..design.ncols()).map(|j| format!("c{j}")).collect();
    let fit = ols(&DVector::from_column_slice(y), &design, &names).unwrap();
    let m = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let k = subset.len() as f64;
    1.0 - (fit.rss() / (n as f64 - k - 1.0)) / (tss / (n as f64 - 1.0))
}

#[test]
fn lasso_subset_ranks_in_top_decile_by_adjusted_r2() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for _ in 0..10 {
        let (n, p) = (300, 10);
        let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                1.2 * x[(i, 0)] - 0.9 * x[(i, 3)] + 0.6 * x[(i, 7)] + 0.8 * x[(i, 1)]
                    - 0.7 * x[(i, 5)]
                    + 0.5 * x[(i, 9)]
                    + normal(&mut rng)
            })
            .collect();
        let sel = lasso_select(&y, &x, &LassoConfig::default()).unwrap();
        let chosen = adjusted_r2(&y, &x, &sel.selected);
        let mut all: Vec<f64> = (0u32..1 << p)
            .map(|mask| {
                let s: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
                adjusted_r2(&y, &x, &s)
            })
            .collect();
        all.sort_by(|a, b| b.total_cmp(a));
        let cutoff = all[all.len() / 10];
        assert!(
            chosen >= cutoff,
            "adj R2 {chosen} below top-decile cutoff {cutoff}"
        );
    }
}

#[test]
fn cluster_robust_is_close_to_classical_under_iid() {
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let n = 1000;
    let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { normal(&mut rng) });
    let y = DVector::from_fn(n, |i, _| {
        1.0 + 0.5 * x[(i, 1)] - 0.2 * x[(i, 2)] + normal(&mut rng)
    });
    let clusters: Vec<usize> = (0..n).map(|_| rng.random_range(0..50)).collect();
    let names: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
    let fit = ols(&y, &x, &names).unwrap();
    let classical = classical_vcov(&fit, n, 3);
    let robust = cluster_robust_vcov(&x, &fit.residuals, &clusters, &names).unwrap();
    for j in 0..3 {
        let ratio = robust[(j, j)] / classical[(j, j)];
        assert!(
            (1.0 / 3.0..=3.0).contains(&ratio),
            "ratio {ratio} for column {j}"
        );
    }
}
