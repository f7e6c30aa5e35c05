use experiment::analysis::{bca_ci, bca_ci_with, ols, percentile_ci, LengthStats};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn five_point_fit_matches_the_long_hand_answer() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [2.1, 3.9, 6.2, 7.8, 10.1];
    let r = ols(&x, &y).unwrap();
    // Exact rational arithmetic: slope 199/100, intercept 1/20,
    // R² = 39601/39708; p from Student's t with 3 df.
    assert!((r.slope - 1.99).abs() < 1e-12);
    assert!((r.intercept - 0.05).abs() < 1e-12);
    assert!((r.r2 - 39601.0 / 39708.0).abs() < 1e-12);
    assert!((r.p_value - 5.941539111755348e-05).abs() < 1e-12);
    let expected_res = [0.06, -0.13, 0.18, -0.21, 0.1];
    for (a, b) in r.residuals.iter().zip(expected_res) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Normal-equation form, independent of the centred formulas in the library.
fn normal_equations(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

proptest! {
    #[test]
    fn residuals_are_orthogonal_to_x(pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let r = ols(&x, &y).unwrap();
        let dot: f64 = r.residuals.iter().zip(&x).map(|(e, v)| e * v).sum();
        let scale: f64 = r.residuals.iter().map(|e| e.abs()).sum::<f64>() * 10.0 + 1.0;
        prop_assert!(dot.abs() / scale < 1e-9);
        prop_assert!(r.residuals.iter().sum::<f64>().abs() / scale < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.r2));
        let (slope, intercept) = normal_equations(&x, &y);
        prop_assert!((slope - r.slope).abs() < 1e-6 * (1.0 + slope.abs()));
        prop_assert!((intercept - r.intercept).abs() < 1e-6 * (1.0 + intercept.abs()));
    }

    #[test]
    fn interval_contains_the_estimate(xs in prop::collection::vec(0.0f64..9.0, 2..40), seed in any::<u64>()) {
        let ci = bca_ci(&xs, 299, 0.95, seed).unwrap();
        prop_assert!(ci.lower <= ci.estimate && ci.estimate <= ci.upper);
    }

    #[test]
    fn streamed_and_batch_lengths_agree(ls in prop::collection::vec(0usize..20, 0..200)) {
        let mut s = LengthStats::default();
        ls.iter().for_each(|&l| s.push(l));
        let b = LengthStats::of(&ls);
        prop_assert_eq!(s, b);
        if !ls.is_empty() {
            prop_assert_eq!(s.mean().to_bits(), b.mean().to_bits());
        }
    }
}

#[test]
fn bca_is_close_to_percentile_on_symmetric_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let normal = Normal::new(5.0, 2.0).unwrap();
    let xs: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
    let bca = bca_ci(&xs, 9999, 0.95, 3).unwrap();
    let (lo, hi) = percentile_ci(&xs, 9999, 0.95, 3).unwrap();
    assert!((bca.lower - lo).abs() < 0.05 * sd, "{} vs {lo}", bca.lower);
    assert!((bca.upper - hi).abs() < 0.05 * sd, "{} vs {hi}", bca.upper);
    assert!(bca.acceleration.abs() < 0.01);
}

#[test]
fn skewed_data_moves_bca_away_from_percentile() {
    // Exponential-like data: BCa should shift the upper endpoint out.
    let xs: Vec<f64> = (1..=60).map(|i| -((i as f64) / 61.0).ln()).collect();
    let bca = bca_ci(&xs, 4999, 0.95, 8).unwrap();
    let forced = bca_ci_with(&xs, 4999, 0.95, 8, Some((0.0, 0.0))).unwrap();
    assert!(bca.acceleration > 0.0);
    assert!(bca.upper > forced.upper);
}

#[test]
fn bootstrap_is_seeded() {
    let xs: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
    assert_eq!(bca_ci(&xs, 999, 0.95, 1).unwrap(), bca_ci(&xs, 999, 0.95, 1).unwrap());
    assert_ne!(bca_ci(&xs, 999, 0.95, 1).unwrap(), bca_ci(&xs, 999, 0.95, 2).unwrap());
}
