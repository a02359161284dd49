//! Temperature and affine fits on data with a known calibrated temperature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transcal_core::scaling::{
    fit_affine, fit_cpcs_temperature, fit_matrix_scaling, fit_oracle_temperature, fit_temperature_nll,
    fit_vector_scaling, AffineConfig, AffineKind,
};
use transcal_core::Matrix;

/// Logits with labels drawn from their own softmax, so `T = 1` is optimal in
/// expectation.
fn calibrated(n: usize, k: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        let mut u = rng.random::<f64>() * s;
        let mut y = k - 1;
        for (j, v) in e.iter().enumerate() {
            if u < *v {
                y = j;
                break;
            }
            u -= v;
        }
        labels.push(y);
        data.extend(z);
    }
    (Matrix::new(n, k, data).unwrap(), labels)
}

/// Mean NLL with a softmax written out independently of the library.
fn nll_at(logits: &Matrix, labels: &[usize], t: f64) -> f64 {
    logits
        .iter_rows()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m / t + z.iter().map(|v| ((v - m) / t).exp()).sum::<f64>().ln();
            lse - z[y] / t
        })
        .sum::<f64>()
        / labels.len() as f64
}

/// Dense log-grid argmin.
fn grid_argmin(f: impl Fn(f64) -> f64) -> f64 {
    (0..=4000)
        .map(|i| (0.1f64.ln() + i as f64 * (10f64.ln() - 0.1f64.ln()) / 4000.0).exp())
        .map(|t| (t, f(t)))
        .fold((f64::NAN, f64::INFINITY), |best, (t, v)| if v < best.1 { (t, v) } else { best })
        .0
}

#[test]
fn calibrated_logits_fit_unit_temperature() {
    let (z, y) = calibrated(10_000, 4, 1);
    let fit = fit_temperature_nll(&z, &y).unwrap();
    assert!((fit.temperature.value() - 1.0).abs() <= 0.1, "{fit:?}");
    assert!(!fit.degenerate);
}

#[test]
fn doubled_logits_fit_temperature_two() {
    let (z, y) = calibrated(10_000, 4, 2);
    let fit = fit_temperature_nll(&z.scaled(2.0), &y).unwrap();
    assert!((fit.temperature.value() - 2.0).abs() <= 0.1, "{fit:?}");
}

#[test]
fn temperature_scales_with_logits() {
    let (z, y) = calibrated(3_000, 3, 3);
    let base = fit_temperature_nll(&z, &y).unwrap().temperature.value();
    for c in [0.5, 3.0, 7.0] {
        let t = fit_temperature_nll(&z.scaled(c), &y).unwrap().temperature.value();
        assert!((t / base - c).abs() <= 1e-3 * c, "c={c}: {t} vs {base}");
    }
}

#[test]
fn fit_agrees_with_dense_grid() {
    let (z, y) = calibrated(2_000, 5, 4);
    let z = z.scaled(1.7);
    let fit = fit_temperature_nll(&z, &y).unwrap();
    let grid = grid_argmin(|t| nll_at(&z, &y, t));
    assert!((fit.temperature.value() - grid).abs() <= 2e-3, "{} vs {grid}", fit.temperature.value());
    assert!(fit.objective <= nll_at(&z, &y, grid) + 1e-9);
}

#[test]
fn oracle_is_the_same_procedure() {
    let (z, y) = calibrated(1_000, 3, 5);
    assert_eq!(fit_oracle_temperature(&z, &y).unwrap(), fit_temperature_nll(&z, &y).unwrap());
}

#[test]
fn cpcs_unit_weights_near_brier_optimum() {
    let (z, y) = calibrated(5_000, 4, 6);
    let z = z.scaled(1.5);
    let brier = |t: f64| {
        z.iter_rows()
            .zip(&y)
            .map(|(r, &label)| {
                let e: Vec<f64> = r.iter().map(|v| (v / t).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter()
                    .enumerate()
                    .map(|(j, v)| (v / s - f64::from(u8::from(j == label))).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
    };
    let fit = fit_cpcs_temperature(&z, &y, &vec![1.0; y.len()]).unwrap();
    let grid = grid_argmin(brier);
    assert!((fit.temperature.value() - grid).abs() <= 0.15, "{} vs {grid}", fit.temperature.value());
}

#[test]
fn cpcs_weight_scale_does_not_matter() {
    let (z, y) = calibrated(1_000, 3, 7);
    let ones = fit_cpcs_temperature(&z, &y, &vec![1.0; y.len()]).unwrap();
    let twos = fit_cpcs_temperature(&z, &y, &vec![2.0; y.len()]).unwrap();
    assert_eq!(ones.temperature, twos.temperature);
}

#[test]
fn affine_fits_stay_near_identity_on_calibrated_data() {
    let (z, y) = calibrated(10_000, 4, 8);
    for fit in [fit_vector_scaling(&z, &y).unwrap(), fit_matrix_scaling(&z, &y).unwrap()] {
        assert!(fit.loss <= fit.initial_loss);
        for r in 0..4 {
            for c in 0..4 {
                let id = if r == c { 1.0 } else { 0.0 };
                assert!((fit.params.scale.get(r, c) - id).abs() <= 0.1, "{:?}", fit.params);
            }
            assert!(fit.params.bias[r].abs() <= 0.1);
        }
    }
}

#[test]
fn tied_vector_scaling_matches_temperature_scaling() {
    let (z, y) = calibrated(4_000, 4, 9);
    let z = z.scaled(2.0);
    let tied = fit_affine(
        &z,
        &y,
        AffineKind::Vector,
        AffineConfig {
            tied_scale: true,
            fit_bias: false,
            max_iterations: 20_000,
            ..AffineConfig::default()
        },
    )
    .unwrap();
    let ts = fit_temperature_nll(&z, &y).unwrap();
    assert!((tied.loss - ts.objective).abs() <= 1e-3, "{} vs {}", tied.loss, ts.objective);
}

#[test]
fn matrix_scaling_no_worse_than_vector() {
    let (z, y) = calibrated(3_000, 3, 10);
    // Miscalibrate per class so both fits have work to do.
    let skewed = Matrix::from_rows(
        &z.iter_rows()
            .map(|r| vec![r[0] * 2.0, r[1] * 0.7 + 0.3 * r[0], r[2] - 0.5])
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let v = fit_vector_scaling(&skewed, &y).unwrap();
    let m = fit_matrix_scaling(&skewed, &y).unwrap();
    assert!(m.loss <= v.loss + 1e-6, "{} vs {}", m.loss, v.loss);
}
