//! Synthetic covariate-shift tasks with closed-form ground truth.
//!
//! Source inputs follow `N(0, I)` and target inputs `N(delta, s I)`. Labels
//! for both domains come from one shared conditional: the posterior of an
//! isotropic Gaussian class model with means `mu_k = (spacing / sqrt 2) e_k`,
//! so that `p(y | x) = q(y | x)` holds by construction. Classifier logits are
//! `t_true` times the calibrated log-posterior, making `t_true` the
//! temperature that calibrates both domains.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scaling::softmax_into;

/// Fraction of source rows used for training; the rest form the validation split.
pub const TRAIN_FRACTION_NUMERATOR: usize = 4;
pub const TRAIN_FRACTION_DENOMINATOR: usize = 5;

const STREAM_SOURCE_FEATURES: u64 = 0;
const STREAM_TARGET_FEATURES: u64 = 1;
const STREAM_SOURCE_LABELS: u64 = 2;
const STREAM_TARGET_LABELS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    pub dimension: usize,
    pub num_classes: usize,
    /// Distance between any two class means.
    pub class_mean_spacing: f64,
    /// Standard deviation of the class model behind the labeling posterior.
    pub class_std: f64,
    /// Target mean shift `delta`, length `dimension`.
    pub shift: Vec<f64>,
    /// Target covariance is `variance_scale * I`.
    pub variance_scale: f64,
    /// Factor applied to calibrated logits.
    pub distortion_temperature: f64,
    pub seed: u64,
}

/// Unit shift direction: half the shift moves label-relevant coordinates,
/// half moves nuisance coordinates.
pub fn shift_direction(dimension: usize) -> Vec<f64> {
    const PATTERN: [f64; 8] = [1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let mut v: Vec<f64> = (0..dimension).map(|i| PATTERN[i % PATTERN.len()]).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

impl ShiftScenario {
    pub const DEFAULT_DIMENSION: usize = 8;
    pub const DEFAULT_CLASSES: usize = 4;
    pub const DEFAULT_CLASS_STD: f64 = 0.6;

    /// Default-geometry scenario with a shift of the given norm.
    pub fn standard(shift_norm: f64, variance_scale: f64, distortion_temperature: f64, seed: u64) -> Self {
        let d = Self::DEFAULT_DIMENSION;
        Self {
            dimension: d,
            num_classes: Self::DEFAULT_CLASSES,
            class_mean_spacing: 1.0,
            class_std: Self::DEFAULT_CLASS_STD,
            shift: shift_direction(d).into_iter().map(|v| v * shift_norm).collect(),
            variance_scale,
            distortion_temperature,
            seed,
        }
    }

    /// Every combination of shift norm {0, 0.5, 1, 1.5}, variance scale
    /// {1, 1.2} and distortion temperature {1, 2, 3}.
    pub fn default_grid(seed: u64) -> Vec<Self> {
        let mut grid = Vec::new();
        for &norm in &[0.0, 0.5, 1.0, 1.5] {
            for &s in &[1.0, 1.2] {
                for &t in &[1.0, 2.0, 3.0] {
                    grid.push(Self::standard(norm, s, t, seed));
                }
            }
        }
        grid
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn shift_norm(&self) -> f64 {
        self.shift.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True when source and target marginals differ.
    pub fn is_shifted(&self) -> bool {
        self.shift.iter().any(|&v| v != 0.0) || self.variance_scale != 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.dimension == 0 {
            return bad("dimension must be at least 1".into());
        }
        if self.num_classes < 2 || self.num_classes > self.dimension {
            return bad(format!(
                "num_classes must lie in [2, dimension = {}], got {}",
                self.dimension, self.num_classes
            ));
        }
        if self.shift.len() != self.dimension {
            return bad(format!(
                "shift has {} entries for dimension {}",
                self.shift.len(),
                self.dimension
            ));
        }
        if self.shift.iter().any(|v| !v.is_finite()) {
            return bad("shift must be finite".into());
        }
        for (name, v) in [
            ("class_mean_spacing", self.class_mean_spacing),
            ("class_std", self.class_std),
            ("variance_scale", self.variance_scale),
            ("distortion_temperature", self.distortion_temperature),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// The labeling conditional shared by both domains.
    pub fn labeling(&self) -> LabelingFunction {
        LabelingFunction {
            num_classes: self.num_classes,
            mean_coordinate: self.class_mean_spacing / std::f64::consts::SQRT_2,
            variance: self.class_std * self.class_std,
        }
    }

    /// `log q(x) - log p(x)`.
    pub fn log_true_weight(&self, x: &[f64]) -> f64 {
        let s = self.variance_scale;
        let mut q = 0.0;
        let mut p = 0.0;
        for (v, m) in x.iter().zip(&self.shift) {
            q += (v - m) * (v - m);
            p += v * v;
        }
        -q / (2.0 * s) + p / 2.0 - 0.5 * self.dimension as f64 * s.ln()
    }

    /// Exact density ratio `q(x) / p(x)`.
    pub fn true_weight(&self, x: &[f64]) -> f64 {
        self.log_true_weight(x).exp()
    }

    /// Closed-form `d_{alpha+1}(q || p) = (E_p[w^(alpha+1)])^(1/alpha)`.
    ///
    /// Fails when the integral diverges, which happens for wide targets and
    /// large orders (`(alpha+1)/s - alpha <= 0`).
    pub fn true_renyi(&self, alpha: f64) -> Result<f64> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let s = self.variance_scale;
        let beta = alpha + 1.0;
        let a = beta / s + 1.0 - beta;
        if a <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Renyi integral diverges for alpha = {alpha} with variance scale {s}"
            )));
        }
        let d = self.dimension as f64;
        let norm2 = self.shift.iter().map(|v| v * v).sum::<f64>();
        let log_integral =
            d * (-0.5 * beta * s.ln() - 0.5 * a.ln()) + norm2 * (-beta / (2.0 * s) + beta * beta / (2.0 * s * s * a));
        Ok((log_integral / alpha).exp())
    }
}

/// Posterior of the shared Gaussian class model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelingFunction {
    num_classes: usize,
    mean_coordinate: f64,
    variance: f64,
}

impl LabelingFunction {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Calibrated log-posterior (up to a shared constant) for one input.
    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.mean_coordinate;
        for (k, o) in out.iter_mut().enumerate() {
            *o = (m * x[k] - 0.5 * m * m) / self.variance;
        }
    }

    pub fn logits(&self, features: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(features.rows(), self.num_classes);
        for i in 0..features.rows() {
            self.logits_into(features.row(i), out.row_mut(i));
        }
        out
    }

    /// Draws one label per row from the posterior.
    pub fn sample_labels<R: Rng>(&self, features: &Matrix, rng: &mut R) -> Vec<usize> {
        let k = self.num_classes;
        let mut z = vec![0.0; k];
        let mut p = vec![0.0; k];
        features
            .iter_rows()
            .map(|x| {
                self.logits_into(x, &mut z);
                softmax_into(&z, 1.0, &mut p);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (j, pj) in p.iter().enumerate() {
                    acc += pj;
                    if u < acc {
                        return j;
                    }
                }
                k - 1
            })
            .collect()
    }
}

/// Labels that only evaluation code may read.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationLabels(Vec<usize>);

impl EvaluationLabels {
    /// Access for oracle fitting and scoring. Nothing on the calibration
    /// path calls this.
    pub fn reveal(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub features: Matrix,
    pub logits: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplit {
    pub features: Matrix,
    pub logits: Matrix,
    pub labels: EvaluationLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTask {
    pub scenario: ShiftScenario,
    pub source_train: LabeledSplit,
    pub source_val: LabeledSplit,
    pub target: TargetSplit,
    /// Exact `q/p` on the source validation rows.
    pub true_weights: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, mean: &[f64], std: f64) -> Matrix {
    let d = mean.len();
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        for (v, mu) in m.row_mut(i).iter_mut().zip(mean) {
            let z: f64 = rng.sample(StandardNormal);
            *v = mu + std * z;
        }
    }
    m
}

impl GeneratedTask {
    /// Regenerates target labels from the stored target features using the
    /// shared conditional.
    pub fn regenerate_target_labels(&self) -> Vec<usize> {
        let mut rng = stream_rng(self.scenario.seed, STREAM_TARGET_LABELS);
        self.scenario.labeling().sample_labels(&self.target.features, &mut rng)
    }

    /// Source train and validation rows stacked, with their labels.
    pub fn all_source(&self) -> (Matrix, Matrix, Vec<usize>) {
        let features = self
            .source_train
            .features
            .vstack(&self.source_val.features)
            .expect("splits share a dimension");
        let logits = self
            .source_train
            .logits
            .vstack(&self.source_val.logits)
            .expect("splits share a class count");
        let mut labels = self.source_train.labels.clone();
        labels.extend_from_slice(&self.source_val.labels);
        (features, logits, labels)
    }
}

/// Draws a task: `n_source` source rows split 80/20 into train and
/// validation, and `n_target` target rows. Deterministic in the seed.
pub fn generate(scenario: &ShiftScenario, n_source: usize, n_target: usize) -> Result<GeneratedTask> {
    scenario.validate()?;
    if n_source == 0 || n_target == 0 {
        return Err(Error::InvalidParameter("split sizes must be at least 1".into()));
    }
    let d = scenario.dimension;
    let labeling = scenario.labeling();
    let t_true = scenario.distortion_temperature;

    let mut rng = stream_rng(scenario.seed, STREAM_SOURCE_FEATURES);
    let source_x = gaussian_rows(&mut rng, n_source, &vec![0.0; d], 1.0);
    let mut rng = stream_rng(scenario.seed, STREAM_TARGET_FEATURES);
    let target_x = gaussian_rows(&mut rng, n_target, &scenario.shift, scenario.variance_scale.sqrt());

    let mut rng = stream_rng(scenario.seed, STREAM_SOURCE_LABELS);
    let source_y = labeling.sample_labels(&source_x, &mut rng);
    let mut rng = stream_rng(scenario.seed, STREAM_TARGET_LABELS);
    let target_y = labeling.sample_labels(&target_x, &mut rng);

    let source_logits = labeling.logits(&source_x).scaled(t_true);
    let target_logits = labeling.logits(&target_x).scaled(t_true);

    let n_train = n_source * TRAIN_FRACTION_NUMERATOR / TRAIN_FRACTION_DENOMINATOR;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..n_source).collect();
    let split = |idx: &[usize]| LabeledSplit {
        features: source_x.select_rows(idx),
        logits: source_logits.select_rows(idx),
        labels: idx.iter().map(|&i| source_y[i]).collect(),
    };
    let source_train = split(&train_idx);
    let source_val = split(&val_idx);
    let true_weights = source_val
        .features
        .iter_rows()
        .map(|x| scenario.true_weight(x))
        .collect();

    Ok(GeneratedTask {
        scenario: scenario.clone(),
        source_train,
        source_val,
        target: TargetSplit {
            features: target_x,
            logits: target_logits,
            labels: EvaluationLabels(target_y),
        },
        true_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_dim(shift: f64, s: f64) -> ShiftScenario {
        ShiftScenario {
            dimension: 2,
            num_classes: 2,
            class_mean_spacing: 1.0,
            class_std: 1.0,
            shift: vec![shift, 0.0],
            variance_scale: s,
            distortion_temperature: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn no_shift_weight_is_one() {
        let sc = ShiftScenario::standard(0.0, 1.0, 2.0, 3);
        assert_eq!(sc.true_weight(&[0.3, -1.0, 2.0, 0.0, 0.1, 0.0, 5.0, -2.0]), 1.0);
        assert!(!sc.is_shifted());
    }

    #[test]
    fn closed_form_weight_examples() {
        let sc = one_dim(1.0, 1.0);
        assert_abs_diff_eq!(sc.true_weight(&[0.5, 0.0]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sc.true_weight(&[2.0, 0.0]), 1.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn renyi_closed_form_examples() {
        let sc = ShiftScenario::standard(0.0, 1.0, 1.0, 0);
        for alpha in [0.5, 1.0, 2.0, 5.0] {
            assert_abs_diff_eq!(sc.true_renyi(alpha).unwrap(), 1.0, epsilon = 1e-12);
        }
        let sc = ShiftScenario::standard(1.0, 1.0, 1.0, 0);
        assert_abs_diff_eq!(sc.true_renyi(1.0).unwrap(), std::f64::consts::E, epsilon = 1e-12);
        let mut prev = 1.0;
        for norm in [0.25, 0.5, 1.0, 1.5] {
            let v = ShiftScenario::standard(norm, 1.0, 1.0, 0).true_renyi(2.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn renyi_divergent_case_reported() {
        let sc = one_dim(0.0, 4.0);
        assert!(sc.true_renyi(1.0).is_err());
        assert!(sc.true_renyi(0.0).is_err());
    }

    #[test]
    fn split_sizes() {
        let task = generate(&ShiftScenario::standard(0.5, 1.0, 2.0, 1), 10_000, 300).unwrap();
        assert_eq!(task.source_train.features.rows(), 8000);
        assert_eq!(task.source_val.logits.rows(), 2000);
        assert_eq!(task.source_val.logits.cols(), 4);
        assert_eq!(task.target.logits.rows(), 300);
        assert_eq!(task.true_weights.len(), 2000);
    }

    #[test]
    fn deterministic_in_seed() {
        let sc = ShiftScenario::standard(1.0, 1.2, 3.0, 42);
        assert_eq!(generate(&sc, 500, 200).unwrap(), generate(&sc, 500, 200).unwrap());
        assert_ne!(
            generate(&sc, 500, 200).unwrap().target.features,
            generate(&sc.with_seed(43), 500, 200).unwrap().target.features
        );
    }

    #[test]
    fn logits_divide_back_to_calibrated() {
        let sc = ShiftScenario::standard(1.0, 1.0, 2.0, 5);
        let task = generate(&sc, 200, 100).unwrap();
        let calibrated = sc.labeling().logits(&task.target.features);
        assert_eq!(task.target.logits.scaled(0.5), calibrated);
    }

    #[test]
    fn target_labels_regenerate() {
        let task = generate(&ShiftScenario::standard(1.5, 1.2, 1.0, 9), 100, 400).unwrap();
        assert_eq!(task.regenerate_target_labels(), task.target.labels.reveal());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut sc = ShiftScenario::standard(1.0, 1.0, 1.0, 0);
        sc.variance_scale = 0.0;
        assert!(generate(&sc, 10, 10).is_err());
        let mut sc = ShiftScenario::standard(1.0, 1.0, 1.0, 0);
        sc.distortion_temperature = -1.0;
        assert!(generate(&sc, 10, 10).is_err());
        let mut sc = ShiftScenario::standard(1.0, 1.0, 1.0, 0);
        sc.shift.pop();
        assert!(sc.validate().is_err());
        assert!(generate(&ShiftScenario::standard(1.0, 1.0, 1.0, 0), 0, 10).is_err());
    }

    #[test]
    fn direction_is_unit() {
        for d in [1, 3, 8, 13] {
            let u = shift_direction(d);
            assert_abs_diff_eq!(u.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}
