//! Quantile estimators: optimality, partition invariance and transform identities.

use proptest::prelude::*;

use fedstat::quantile::{
    estimate_quantile_loss, fit_yj_mle, quantile_loss, yj_inverse, yj_range, yj_transform,
    LocalLossOracle, LocalMomentOracle, LossOracle, LossPoint, LossValue, MleMode,
};
use fedstat::{FedError, Result};

/// Records every query point on its way to the in-process oracle.
struct Recording<'a> {
    inner: LocalLossOracle<'a, f64>,
    seen: Vec<f64>,
}

impl LossOracle<f64> for Recording<'_> {
    fn range(&mut self) -> Result<(f64, f64)> {
        self.inner.range()
    }

    fn query(&mut self, points: &[LossPoint<f64>]) -> Result<Vec<LossValue<f64>>> {
        self.seen.extend(points.iter().map(|p| p.q));
        self.inner.query(points)
    }
}

/// Midpoint of the minimizer set of the pooled loss.
fn oracle_quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    // Right derivative just above s[i].
    let right = |i: usize| {
        let le = s.partition_point(|&v| v <= s[i]);
        (1.0 - p) * le as f64 - p * (n - le) as f64
    };
    let a = (0..n).find(|&i| right(i) >= 0.0).unwrap();
    let b = (0..n).find(|&i| right(i) > 0.0).unwrap_or(n - 1);
    (s[a] + s[b]) / 2.0
}

fn split(values: &[f64], cuts: &[usize]) -> Vec<Vec<f64>> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut ends: Vec<usize> = cuts.iter().map(|&c| c % (values.len() + 1)).collect();
    ends.sort_unstable();
    for e in ends {
        parts.push(values[start..e.max(start)].to_vec());
        start = e.max(start);
    }
    parts.push(values[start..].to_vec());
    parts
}

fn data() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-100.0f64..100.0, 1..150),
        prop::collection::vec((0i32..10).prop_map(|v| v as f64 * 0.25), 1..150),
    ]
}

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.02),
        Just(0.25),
        Just(0.5),
        Just(0.75),
        Just(0.98),
        0.01f64..0.99
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn loss_estimate_is_the_minimizer_midpoint(v in data(), p in prob()) {
        let centers = vec![v.clone()];
        let est = estimate_quantile_loss(&mut LocalLossOracle::new(&centers), &[p]).unwrap()[0].value;
        let want = oracle_quantile(&v, p);
        let scale = v.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        prop_assert!((est - want).abs() <= 1e-12 * scale, "{est} vs {want}");
        // And it minimizes the loss over all data points.
        let best = v.iter().map(|&q| quantile_loss(q, &v, p).loss).fold(f64::INFINITY, f64::min);
        prop_assert!(quantile_loss(est, &v, p).loss <= best + 1e-9 * scale * v.len() as f64);
    }

    #[test]
    fn loss_queries_avoid_raw_values(v in prop::collection::vec(-100.0f64..100.0, 2..150), p in prob()) {
        let centers = vec![v.clone()];
        let mut o = Recording { inner: LocalLossOracle::new(&centers), seen: Vec::new() };
        estimate_quantile_loss(&mut o, &[p]).unwrap();
        for q in &o.seen {
            prop_assert!(!v.contains(q), "query {q} equals a data value");
        }
    }

    #[test]
    fn loss_is_partition_invariant(v in data(), cuts in prop::collection::vec(any::<usize>(), 0..5)) {
        let probs = [0.02, 0.25, 0.5, 0.75, 0.98];
        let pooled = vec![v.clone()];
        let parts = split(&v, &cuts);
        let a = estimate_quantile_loss(&mut LocalLossOracle::new(&pooled), &probs).unwrap();
        let b = estimate_quantile_loss(&mut LocalLossOracle::new(&parts), &probs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.value - y.value).abs() <= 1e-9, "{} vs {}", x.value, y.value);
            prop_assert_eq!(x.communication_rounds, y.communication_rounds);
        }
    }

    #[test]
    fn mle_is_partition_invariant(v in prop::collection::vec(0.0f64..20.0, 5..150),
                                  cuts in prop::collection::vec(any::<usize>(), 0..5)) {
        let pooled = vec![v.clone()];
        let parts = split(&v, &cuts);
        for mode in [MleMode::Iterative, MleMode::Grid] {
            let a = fit_yj_mle(&mut LocalMomentOracle::new(&pooled), mode);
            let b = fit_yj_mle(&mut LocalMomentOracle::new(&parts), mode);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.lambda - b.lambda).abs() <= 1e-9);
                    prop_assert!((a.location - b.location).abs() <= 1e-9 * a.location.abs().max(1.0));
                    prop_assert!((a.scale - b.scale).abs() <= 1e-9 * a.scale.abs().max(1.0));
                }
                (Err(FedError::DegenerateVariance), Err(FedError::DegenerateVariance)) => {}
                (a, b) => prop_assert!(false, "diverging outcomes {:?} / {:?}", a, b),
            }
        }
    }

    #[test]
    fn yj_round_trip(x in -1e3f64..1e3, lambda in -2.0f64..4.0) {
        let z = yj_transform(x, lambda);
        let back = yj_inverse(z, lambda).unwrap();
        prop_assert!((back - x).abs() <= 1e-10 * x.abs().max(1.0), "{x} -> {z} -> {back}");
    }

    #[test]
    fn yj_is_increasing(a in -50.0f64..50.0, d in 1e-3f64..10.0, lambda in -2.0f64..4.0) {
        prop_assert!(yj_transform(a + d, lambda) > yj_transform(a, lambda));
    }

    #[test]
    fn yj_image_stays_in_range(x in -1e3f64..1e3, lambda in -2.0f64..4.0) {
        let (lo, hi) = yj_range(lambda);
        let z = yj_transform(x, lambda);
        prop_assert!(z > lo && z < hi);
    }
}

#[test]
fn inverse_outside_range_is_an_error() {
    assert!(matches!(
        yj_inverse(-1.0, 3.0),
        Err(FedError::OutOfRange { .. })
    ));
    assert!(matches!(
        yj_inverse(0.5, -2.0),
        Err(FedError::OutOfRange { .. })
    ));
    assert!(yj_inverse(0.49, -2.0).is_ok());
}
