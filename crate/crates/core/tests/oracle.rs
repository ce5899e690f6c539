use iwgan::data::{make_grid, make_ring, sample_mixture, sample_latent};
use iwgan::metrics::{exact_w1, mode_coverage};
use iwgan::oracle::*;
use iwgan::Matrix;
use proptest::prelude::*;

/// `P(K ≤ t)` for the Kolmogorov limit distribution.
fn kolmogorov_cdf(t: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..200 {
        let k = k as f64;
        s += (-1f64).powf(k - 1.0) * (-2.0 * k * k * t * t).exp();
    }
    1.0 - 2.0 * s
}

/// Critical value of the one-sample KS statistic at level `alpha`, with
/// Stephens' finite-sample scaling.
fn ks_critical(n: usize, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.3, 3.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < 1.0 - alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rn = (n as f64).sqrt();
    lo / (rn + 0.12 + 0.11 / rn)
}

fn ks_statistic(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = norm_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn ring() -> AnalyticDensity2D {
    AnalyticDensity2D::from_mixture(&make_ring()).unwrap()
}

#[test]
fn ks_critical_value_matches_tables() {
    // Asymptotic 1% point of the Kolmogorov distribution.
    assert!((ks_critical(1_000_000, 0.01) * 1000.0 - 1.6276).abs() < 2e-3);
    assert!((ks_critical(5000, 0.01) - 0.02298).abs() < 1e-4);
}

#[test]
fn ring_pushforward_is_standard_normal() {
    let d = ring();
    let x = sample_mixture(&make_ring(), 5000, 31).unwrap();
    let mut z0 = Vec::new();
    let mut z1 = Vec::new();
    for r in 0..x.rows() {
        let z = d.rosenblatt_forward([x.get(r, 0), x.get(r, 1)]).unwrap();
        z0.push(z[0]);
        z1.push(z[1]);
    }
    let crit = ks_critical(5000, 0.01);
    let (k0, k1) = (ks_statistic(z0), ks_statistic(z1));
    assert!(k0 < crit && k1 < crit, "KS {k0}, {k1} vs {crit}");
}

#[test]
fn round_trip_on_ring_and_grid() {
    for (spec, seed) in [(make_ring(), 32), (make_grid(), 33)] {
        let d = AnalyticDensity2D::from_mixture(&spec).unwrap();
        let x = sample_mixture(&spec, 1000, seed).unwrap();
        for r in 0..x.rows() {
            let p = [x.get(r, 0), x.get(r, 1)];
            let back = d.rosenblatt_inverse(d.rosenblatt_forward(p).unwrap()).unwrap();
            let err = ((back[0] - p[0]).powi(2) + (back[1] - p[1]).powi(2)).sqrt();
            assert!(err <= 1e-8, "{p:?} -> {back:?}");
        }
    }
}

fn pushforward(d: &AnalyticDensity2D, z: &Matrix) -> Matrix {
    let mut out = Vec::with_capacity(z.rows() * 2);
    for r in 0..z.rows() {
        out.extend(d.rosenblatt_inverse([z.get(r, 0), z.get(r, 1)]).unwrap());
    }
    Matrix::new(z.rows(), 2, out).unwrap()
}

#[test]
fn pushforward_is_as_close_as_a_fresh_sample() {
    // Single replicates are dominated by mode-count noise, so compare means.
    let d = ring();
    let n = 1024;
    let (mut pushed, mut fresh) = (0.0, 0.0);
    for s in 0..8u64 {
        let generated = pushforward(&d, &sample_latent(2, n, 34 + 3 * s).unwrap());
        let target = sample_mixture(&make_ring(), n, 35 + 3 * s).unwrap();
        let other = sample_mixture(&make_ring(), n, 36 + 3 * s).unwrap();
        pushed += exact_w1(&generated, &target).unwrap().cost;
        fresh += exact_w1(&other, &target).unwrap().cost;
    }
    assert!(pushed < 1.5 * fresh, "{pushed} vs baseline {fresh}");
}

#[test]
fn pushforward_preserves_mode_weights() {
    let d = ring();
    let n = 10_000;
    let generated = pushforward(&d, &sample_latent(2, n, 37).unwrap());
    let cov = mode_coverage(&generated, &make_ring(), 0.1).unwrap();
    assert!(cov.captured_fraction > 0.999);
    // Four binomial standard deviations at p = 1/8.
    let tol = 4.0 * (0.125f64 * 0.875 / n as f64).sqrt();
    for share in cov.mode_shares() {
        assert!((share - 0.125).abs() < tol, "{share}");
    }
}

proptest! {
    #[test]
    fn single_gaussian_is_location_scale(
        mx in -3.0f64..3.0, my in -3.0f64..3.0, s in 0.05f64..4.0,
        ux in -4.0f64..4.0, uy in -4.0f64..4.0,
    ) {
        let d = AnalyticDensity2D::gaussian([mx, my], s).unwrap();
        let x = [mx + s * ux, my + s * uy];
        let z = d.rosenblatt_forward(x).unwrap();
        prop_assert!((z[0] - (x[0] - mx) / s).abs() <= 1e-12);
        prop_assert!((z[1] - (x[1] - my) / s).abs() <= 1e-12);
    }

    #[test]
    fn inverse_is_increasing_in_each_coordinate(
        z1 in -5.0f64..5.0, dz in 0.01f64..2.0, z2 in -5.0f64..5.0,
    ) {
        let d = ring();
        let a = d.rosenblatt_inverse([z1, z2]).unwrap();
        let b = d.rosenblatt_inverse([z1 + dz, z2]).unwrap();
        prop_assert!(b[0] > a[0]);
        let c = d.rosenblatt_inverse([z1, z2 + dz]).unwrap();
        prop_assert_eq!(c[0], a[0]);
        prop_assert!(c[1] > a[1]);
    }

    #[test]
    fn inverse_meets_root_tolerance(z1 in -6.0f64..6.0, z2 in -6.0f64..6.0) {
        let d = ring();
        let x = d.rosenblatt_inverse([z1, z2]).unwrap();
        let f1 = d.marginal_cdf(x[0]);
        let f2 = d.conditional_cdf(x[1], x[0]);
        prop_assert!((f1.lower - norm_cdf(z1)).abs() <= 1e-12);
        prop_assert!((f2.lower - norm_cdf(z2)).abs() <= 1e-12);
    }

    #[test]
    fn cdfs_stay_in_unit_interval(x1 in -10.0f64..10.0, x2 in -10.0f64..10.0) {
        let d = AnalyticDensity2D::from_mixture(&make_grid()).unwrap();
        let f = d.marginal_cdf(x1);
        let c = d.conditional_cdf(x2, x1);
        for t in [f, c] {
            prop_assert!((0.0..=1.0).contains(&t.lower) && (0.0..=1.0).contains(&t.upper));
            prop_assert!((t.lower + t.upper - 1.0).abs() < 1e-12);
        }
    }
}
