mod common;

use cyrisk::extremal::*;
use proptest::prelude::*;

#[test]
fn lag_zero_ratio_is_one() {
    let x = common::uniforms(200, 1);
    for level in [0.1, 0.5, 0.9] {
        assert_eq!(
            extremogram(&x, level, 0, Variant::Ratio).unwrap().value,
            1.0
        );
    }
}

#[test]
fn persistent_series_has_unit_extremogram() {
    // A strictly increasing path stays above any level once it has crossed it.
    let x: Vec<f64> = (0..1_000).map(f64::from).collect();
    let m = extremogram_matrix(&x, &default_levels(), DEFAULT_MAX_LAG, Variant::Ratio).unwrap();
    assert_eq!(m.cells.len(), 99);
    assert!(m.cells.iter().all(|row| row.len() == 124));
    let mut filled = 0;
    for row in &m.cells {
        for c in row.iter().flatten() {
            assert_eq!(c.value, 1.0);
            filled += 1;
        }
    }
    assert!(filled > 99 * 100);
}

#[test]
fn constant_series_rejected() {
    assert!(extremogram(&[4.0; 50], 0.5, 1, Variant::Ratio).is_err());
    assert!(extremogram_matrix(&[4.0; 50], &[0.5], 3, Variant::Ratio).is_err());
}

#[test]
fn iid_series_matches_exceedance_probability() {
    // The ±0.02 band is about two standard errors per cell at n = 10,000, so
    // it is checked as a coverage rate over independent series.
    let mut inside = 0;
    let mut all = Vec::new();
    for seed in 0..20 {
        let x = common::uniforms(10_000, 100 + seed);
        for h in 1..=5 {
            let v = extremogram(&x, 0.9, h, Variant::Ratio).unwrap().value;
            inside += usize::from((v - 0.1).abs() < 0.02);
            all.push(v);
        }
    }
    assert!(inside >= 90, "{inside} of 100 cells inside the band");
    let m = common::mean_of(&all);
    assert!((m - 0.1).abs() < 0.005, "mean {m}");
}

#[test]
fn single_cell_matrix_matches_point_value() {
    let x = common::uniforms(300, 3);
    let m = extremogram_matrix(&x, &[0.8], 1, Variant::Covariance).unwrap();
    let p = extremogram(&x, 0.8, 1, Variant::Covariance).unwrap();
    assert_eq!(m.cells[0][0], Some(p));
}

#[test]
fn all_empty_grid_is_an_error() {
    // Nothing exceeds the maximum, which is the 0.99 quantile of 1..=5.
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!(extremogram_matrix(&x, &[0.99], 2, Variant::Ratio).is_err());
}

#[test]
fn counts_match_direct_computation() {
    let x = common::uniforms(500, 4);
    let mut s = x.clone();
    s.sort_by(f64::total_cmp);
    let level = 0.7;
    let q = s[(level * 500f64).ceil() as usize - 1];
    for h in [1, 5, 17] {
        let cond = (0..500 - h).filter(|&t| x[t] > q).count();
        let joint = (0..500 - h).filter(|&t| x[t] > q && x[t + h] > q).count();
        let v = extremogram(&x, level, h, Variant::Ratio).unwrap();
        assert_eq!(v.exceedance_count, cond);
        assert_eq!(v.value, joint as f64 / cond as f64);
    }
}

#[test]
fn csv_layout() {
    let x = common::uniforms(50, 5);
    let m = extremogram_matrix(&x, &[0.5, 0.9], 3, Variant::Ratio).unwrap();
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "level,lag,value,variant,exceedance_count");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].starts_with("0.5,1,"));
}

fn series() -> impl Strategy<Value = Vec<f64>> {
    (any::<u64>(), 20usize..200).prop_map(|(seed, n)| common::uniforms(n, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn values_within_bounds(x in series()) {
        let levels = [0.2, 0.5, 0.8];
        let max_lag = (x.len() / 3).max(1);
        let r = extremogram_matrix(&x, &levels, max_lag, Variant::Ratio).unwrap();
        for c in r.cells.iter().flatten().flatten() {
            prop_assert!((0.0..=1.0).contains(&c.value));
        }
        let cv = extremogram_matrix(&x, &levels, max_lag, Variant::Covariance).unwrap();
        for (i, &level) in levels.iter().enumerate() {
            let mut s = x.clone();
            s.sort_by(f64::total_cmp);
            let q = s[((level * x.len() as f64).ceil() as usize).max(1) - 1];
            let p = x.iter().filter(|&&v| v > q).count() as f64 / x.len() as f64;
            let n = x.len() as f64;
            for (j, c) in cv.cells[i].iter().enumerate() {
                let Some(c) = c else { continue };
                // Finite-sample bounds: the joint frequency lies in
                // [0, min(1, n p / (n - h))].
                let h = (j + 1) as f64;
                prop_assert!(c.value >= -p * p - 1e-12);
                prop_assert!(c.value <= (n * p / (n - h)).min(1.0) - p * p + 1e-12);
            }
        }
    }

    #[test]
    fn increasing_transform_invariance(x in series()) {
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).exp() + v.powi(3)).collect();
        let levels = [0.1, 0.5, 0.75];
        let lag = (x.len() / 4).max(1);
        let a = extremogram_matrix(&x, &levels, lag, Variant::Ratio).unwrap();
        let b = extremogram_matrix(&y, &levels, lag, Variant::Ratio).unwrap();
        prop_assert_eq!(a.cells, b.cells);
    }
}
