//! Control-variate estimators and the TransCal optimizer on synthetic shift.

use proptest::prelude::*;
use transcal_core::density_ratio::ClassifierConfig;
use transcal_core::optimize::log_grid;
use transcal_core::pipeline::{estimate_task_weights, fit_method};
use transcal_core::synthshift::generate;
use transcal_core::transcal::{
    apply_control_variate, parallel_control_variate, serial_control_variate, TransCalProblem,
};
use transcal_core::{CalibrationTask, Method, MethodOptions, ShiftScenario, TransCalConfig, WeightVector};

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn samples() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (5usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0.0f64..4.0, n),
            prop::collection::vec(prop_oneof![Just(0.0), Just(1.0)], n),
        )
    })
}

/// `u` correlated with both variates.
fn mixed(noise: &[f64], t1: &[f64], t2: &[f64]) -> Vec<f64> {
    noise.iter().zip(t1).zip(t2).map(|((e, a), b)| e + 0.8 * a - 0.5 * b).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fitted_coefficient_minimizes_adjusted_variance(
        (noise, t, _) in samples(),
        etas in prop::collection::vec(-10.0f64..10.0, 20),
        tau in -1.0f64..3.0,
    ) {
        let u = mixed(&noise, &t, &noise);
        let best = apply_control_variate(&u, &t, tau).unwrap();
        prop_assume!(!best.coefficients.degenerate);
        let v_best = variance(&best.adjusted);
        for eta in etas {
            let adjusted: Vec<f64> = u.iter().zip(&t).map(|(ui, ti)| ui + eta * (ti - tau)).collect();
            prop_assert!(v_best <= variance(&adjusted), "eta {} beats the fitted {}", eta, best.coefficients.eta);
        }
    }

    #[test]
    fn known_mean_variate_keeps_estimate_centered((noise, t, _) in samples()) {
        // With tau equal to the sample mean of t, the correction vanishes.
        let u = mixed(&noise, &t, &noise);
        let tau = t.iter().sum::<f64>() / t.len() as f64;
        let o = apply_control_variate(&u, &t, tau).unwrap();
        let plain = u.iter().sum::<f64>() / u.len() as f64;
        prop_assert!((o.estimate - plain).abs() <= 1e-12 * (1.0 + plain.abs()));
    }

    #[test]
    fn serial_stages_never_raise_in_sample_variance((noise, w, r) in samples(), c in 0.2f64..0.9) {
        let u = mixed(&noise, &w, &r);
        let weights = WeightVector::raw(w.clone()).unwrap();
        let s = serial_control_variate(&u, &weights, &r, c).unwrap();
        let stage1: Vec<f64> = u.iter().zip(&w).map(|(ui, wi)| ui + s.weight_stage.eta * (wi - 1.0)).collect();
        let stage2: Vec<f64> = stage1.iter().zip(&r).map(|(ui, ri)| ui + s.correctness_stage.eta * (ri - c)).collect();
        let slack = 1e-12 * (1.0 + variance(&u));
        prop_assert!(variance(&stage1) <= variance(&u) + slack);
        prop_assert!(variance(&stage2) <= variance(&stage1) + slack);
    }

    #[test]
    fn parallel_beats_each_single_variate((noise, t1, t2) in samples()) {
        let u = mixed(&noise, &t1, &t2);
        let p = parallel_control_variate(&u, &t1, 1.0, &t2, 0.5).unwrap();
        prop_assume!(!p.singular);
        let joint: Vec<f64> = (0..u.len()).map(|i| u[i] + p.eta1 * (t1[i] - 1.0) + p.eta2 * (t2[i] - 0.5)).collect();
        let slack = 1e-10 * (1.0 + variance(&u));
        for (t, tau) in [(&t1, 1.0), (&t2, 0.5)] {
            let single = apply_control_variate(&u, t, tau).unwrap();
            prop_assert!(variance(&joint) <= variance(&single.adjusted) + slack);
        }
    }
}

fn task(norm: f64, s: f64, t_true: f64, seed: u64) -> (CalibrationTask, WeightVector) {
    let scenario = ShiftScenario::standard(norm, s, t_true, seed);
    let task = CalibrationTask::from_generated(&generate(&scenario, 10_000, 10_000).unwrap());
    let weights = estimate_task_weights(&task, seed, ClassifierConfig::default()).unwrap().weights;
    (task, weights)
}

fn fitted_t(task: &CalibrationTask, weights: &WeightVector, method: Method) -> f64 {
    let options = MethodOptions {
        weights: Some(weights.clone()),
        ..MethodOptions::default()
    };
    fit_method(task, method, &options).unwrap().map.temperature().unwrap().value()
}

#[test]
fn no_shift_transcal_agrees_with_temperature_scaling() {
    let (task, weights) = task(0.0, 1.0, 2.0, 11);
    let tc = fitted_t(&task, &weights, Method::Transcal);
    let ts = fitted_t(&task, &weights, Method::Temp);
    assert!((tc - ts).abs() <= 0.15, "transcal {tc} vs temp {ts}");
}

#[test]
fn shifted_transcal_recovers_distortion_temperature() {
    let ts: Vec<f64> = (0..10)
        .map(|seed| {
            let (task, weights) = task(1.0, 1.0, 2.0, seed);
            fitted_t(&task, &weights, Method::Transcal)
        })
        .collect();
    let mean = ts.iter().sum::<f64>() / ts.len() as f64;
    assert!((1.6..=2.4).contains(&mean), "mean T* {mean} from {ts:?}");
}

#[test]
fn heavy_shift_optimum_moves_with_lambda() {
    let (task, weights) = task(1.5, 1.2, 2.0, 3);
    let problem = TransCalProblem::new(
        &task.source_val_logits,
        &task.source_val_labels,
        &weights,
        TransCalConfig::default(),
    )
    .unwrap();
    let ts = log_grid(0.5, 8.0, 400);
    let argmin = |lambda: f64| {
        let surface = problem.surface(&ts, &[lambda]).unwrap();
        let i = (0..ts.len())
            .min_by(|&a, &b| surface.get(a, 0).total_cmp(&surface.get(b, 0)))
            .unwrap();
        ts[i]
    };
    let (a0, a1) = (argmin(0.0), argmin(1.0));
    assert!((a0.ln() - a1.ln()).abs() > 1e-4, "argmin T at lambda 0: {a0}, at lambda 1: {a1}");
}

#[test]
fn fixed_coefficient_with_known_mean_is_unbiased_over_resampling() {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 200;
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
    let u: Vec<f64> = t.iter().map(|ti| 0.6 * ti + rng.random_range(-1.0..1.0)).collect();
    // Resampling from this population, so tau is the exact expectation of t.
    let tau = t.iter().sum::<f64>() / n as f64;
    let target = u.iter().sum::<f64>() / n as f64;
    let eta = -0.6;

    let means: Vec<f64> = (0..4000)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    u[i] + eta * (t[i] - tau)
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let se = (variance(&means) / means.len() as f64).sqrt();
    assert!((grand - target).abs() <= 2.0 * se, "mean of means {grand} vs {target}, se {se}");
}
