mod oracles;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regime_games::calib::{
    calibrate, calibration_from_clusters, estimate_generator, kmeans_1d, rolling_volatility, CalibConfig,
    KMeans, OhlcvSeries,
};
use oracles::bar_chain;

fn closes_from_returns(r: &[f64]) -> Vec<f64> {
    let mut c = vec![100.0];
    for x in r {
        let last = *c.last().unwrap();
        c.push(last * x.exp());
    }
    c
}

#[test]
fn constant_price_has_zero_volatility() {
    let s = OhlcvSeries::from_closes(0, 1800, vec![50.0; 30]).unwrap();
    let v = rolling_volatility(&s, 5, 17520.0).unwrap();
    assert!(v[..5].iter().all(Option::is_none));
    assert!(v[5..].iter().all(|x| *x == Some(0.0)));
}

#[test]
fn alternating_returns_closed_form() {
    let r = 0.01;
    let rets: Vec<f64> = (0..40).map(|k| if k % 2 == 0 { r } else { -r }).collect();
    let s = OhlcvSeries::from_closes(0, 1800, closes_from_returns(&rets)).unwrap();
    let (w, ann) = (8usize, 17520.0f64);
    let v = rolling_volatility(&s, w, ann).unwrap();
    let want = ann.sqrt() * r * (w as f64 / (w as f64 - 1.0)).sqrt();
    for x in v.iter().flatten() {
        assert!((x - want).abs() < 1e-12 * want);
    }
}

#[test]
fn full_window_is_sample_sd() {
    let rets = [0.01, -0.02, 0.005, 0.03, -0.01, 0.0, 0.012];
    let s = OhlcvSeries::from_closes(0, 60, closes_from_returns(&rets)).unwrap();
    let v = rolling_volatility(&s, rets.len(), 4.0).unwrap();
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    assert_eq!(defined.len(), 1);
    let lr: Vec<f64> = s.close.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let m = lr.iter().sum::<f64>() / lr.len() as f64;
    let sd = (lr.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (lr.len() - 1) as f64).sqrt();
    assert!((defined[0] - 2.0 * sd).abs() < 1e-14);
}

/// Best 2-cluster split of sorted data by exhaustive threshold scan.
fn threshold_oracle(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let sse = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        (s.iter().map(|x| (x - m).powi(2)).sum::<f64>(), m)
    };
    (1..v.len())
        .map(|cut| {
            let (a, ma) = sse(&v[..cut]);
            let (b, mb) = sse(&v[cut..]);
            (a + b, ma, mb)
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, a, b)| (a, b))
        .unwrap()
}

#[test]
fn kmeans_worked_example() {
    let km = kmeans_1d(&[1.0, 2.0, 8.0, 9.0, 10.0], 2).unwrap();
    assert_eq!(km.centers, vec![1.5, 9.0]);
    assert_eq!(km.labels, vec![0, 0, 1, 1, 1]);
    assert_eq!(threshold_oracle(&[1.0, 2.0, 8.0, 9.0, 10.0]), (1.5, 9.0));
}

proptest! {
    #[test]
    fn kmeans_matches_threshold_oracle_on_separated_data(
        lo in prop::collection::vec(0.0f64..1.0, 3..30),
        hi in prop::collection::vec(5.0f64..6.0, 3..30),
    ) {
        let mut v = lo.clone();
        v.extend(&hi);
        let km = kmeans_1d(&v, 2).unwrap();
        let (a, b) = threshold_oracle(&v);
        prop_assert!((km.centers[0] - a).abs() < 1e-12 && (km.centers[1] - b).abs() < 1e-12);
    }

    #[test]
    fn generator_rows_sum_to_zero(labels in prop::collection::vec(0usize..3, 2..200)) {
        let (g, _) = estimate_generator(&labels, 3, 1.0 / 48.0).unwrap();
        for i in 0..3 {
            let row = g.matrix().row(i);
            let scale = row.iter().map(|r| r.abs()).sum::<f64>();
            prop_assert!(row.iter().sum::<f64>().abs() <= 4.0 * f64::EPSILON * scale);
            prop_assert!(row.iter().enumerate().all(|(j, r)| j == i || *r >= 0.0));
        }
        let two: Vec<usize> = labels.iter().map(|l| l % 2).collect();
        let (g, _) = estimate_generator(&two, 2, 1.0 / 48.0).unwrap();
        for i in 0..2 {
            prop_assert_eq!(g.matrix().row(i).iter().sum::<f64>(), 0.0);
        }
    }
}

#[test]
fn generator_examples() {
    let bar = 1.0 / 48.0;
    let (g, _) = estimate_generator(&[1; 10], 2, bar).unwrap();
    assert_eq!(g.rate(1, 0), 0.0);
    let alt: Vec<usize> = (0..101).map(|k| k % 2).collect();
    let (g, w) = estimate_generator(&alt, 2, bar).unwrap();
    assert!(w.is_empty());
    assert!((g.rate(0, 1) - 48.0).abs() < 1e-12 && (g.rate(1, 0) - 48.0).abs() < 1e-12);
    // 48-minute holding ⇔ 30 per day
    assert_eq!(24.0 * 60.0 / 48.0, 30.0);
    let (_, w) = estimate_generator(&[0, 0, 0], 2, bar).unwrap();
    assert_eq!(w.len(), 1);
}

fn two_regime_series(seed: u64, n: usize) -> OhlcvSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regime = 0;
    let mut rets = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random::<f64>() < 0.01 {
            regime = 1 - regime;
        }
        let sd = if regime == 0 { 0.002 } else { 0.008 };
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        rets.push(sd * z);
    }
    OhlcvSeries::from_closes(1_700_000_000, 1800, closes_from_returns(&rets)).unwrap()
}

#[test]
fn synthetic_two_regime_calibration() {
    let s = two_regime_series(3, 5000);
    let cal = calibrate(&s, &CalibConfig { window: 24, ..Default::default() }).unwrap();
    assert_eq!(cal.sigma.len(), 2);
    assert!(cal.sigma[0] < cal.sigma[1]);
    let ratio = cal.sigma[1] / cal.sigma[0];
    assert!(ratio > 2.0 && ratio < 6.0, "{ratio}");
    assert_eq!(cal.labels.len(), s.len());
    assert!(cal.labels[..24].iter().all(Option::is_none));
}

#[test]
fn relabelled_clusters_give_identical_calibration() {
    let s = two_regime_series(11, 1500);
    let cfg = CalibConfig { window: 24, ..Default::default() };
    let vols = rolling_volatility(&s, cfg.window, cfg.annualization).unwrap();
    let defined: Vec<f64> = vols.iter().flatten().copied().collect();
    let km = kmeans_1d(&defined, 2).unwrap();
    let swapped = KMeans {
        centers: vec![km.centers[1], km.centers[0]],
        labels: km.labels.iter().map(|l| 1 - l).collect(),
    };
    let a = calibration_from_clusters(&s, &cfg, &vols, km).unwrap();
    let b = calibration_from_clusters(&s, &cfg, &vols, swapped).unwrap();
    assert_eq!(a, b);
}

#[test]
fn degenerate_series_is_rejected() {
    let s = OhlcvSeries::from_closes(0, 1800, vec![10.0; 100]).unwrap();
    assert!(calibrate(&s, &CalibConfig::default()).is_err());
}

#[test]
fn round_trip_recovers_rates() {
    let bar = 1.0 / 48.0;
    let labels = bar_chain([30.0, 30.0], bar, 10_000, 2024);
    let (g, _) = estimate_generator(&labels, 2, bar).unwrap();
    for (i, j) in [(0, 1), (1, 0)] {
        assert!((g.rate(i, j) / 30.0 - 1.0).abs() < 0.15, "{}", g.rate(i, j));
    }
}
