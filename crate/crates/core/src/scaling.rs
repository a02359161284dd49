//! Post-hoc scaling calibrators: temperature (NLL, oracle, importance-weighted
//! Brier) plus vector and matrix scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{self, ProbabilitySet};
use crate::optimize::{bracketed_log_minimize, ScalarMin};

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 100.0;
/// Width of the final golden-section bracket, in temperature units.
pub const T_TOL: f64 = 1e-4;
pub const T_GRID_POINTS: usize = 50;

/// Positive divisor applied to logits before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub const IDENTITY: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {t}")));
        }
        Ok(Self(t))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn clamped(t: f64) -> Self {
        Self(t.clamp(T_MIN, T_MAX))
    }
}

pub(crate) fn check_logits(logits: &Matrix) -> Result<()> {
    if logits.rows() == 0 {
        return Err(Error::Empty("logits"));
    }
    if logits.cols() == 0 {
        return Err(Error::Empty("logit classes"));
    }
    if !logits.is_finite() {
        return Err(Error::NonFiniteInput("logits"));
    }
    Ok(())
}

/// Writes `softmax(z / t)` into `out`, subtracting the row max first.
#[inline]
pub fn softmax_into(z: &[f64], t: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = ((v - max) / t).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn softmax_rows(logits: &Matrix, t: f64) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), t, out.row_mut(i));
    }
    out
}

/// Row-wise softmax of `logits / t`.
pub fn softmax_with_temperature(logits: &Matrix, t: Temperature) -> Result<ProbabilitySet> {
    check_logits(logits)?;
    Ok(ProbabilitySet::from_normalized(softmax_rows(logits, t.value())))
}

/// A fitted temperature with its objective value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    pub objective: f64,
    /// Set when the input is degenerate or the optimum sits on a search bound.
    pub degenerate: bool,
    pub evaluations: usize,
}

fn mean_nll_at(logits: &Matrix, labels: &[usize], t: f64, buf: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        softmax_into(logits.row(i), t, buf);
        total -= buf[y].max(metrics::NLL_CLAMP).ln();
    }
    total / labels.len() as f64
}

fn weighted_brier_at(logits: &Matrix, labels: &[usize], weights: &[f64], total_weight: f64, t: f64, buf: &mut [f64]) -> f64 {
    let k = logits.cols() as f64;
    let mut total = 0.0;
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        softmax_into(logits.row(i), t, buf);
        let bs: f64 = buf
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let target = if j == y { 1.0 } else { 0.0 };
                (p - target) * (p - target)
            })
            .sum::<f64>()
            / k;
        total += w * bs;
    }
    total / total_weight
}

fn at_bound(t: f64) -> bool {
    t <= T_MIN * (1.0 + 1e-3) || t >= T_MAX * (1.0 - 1e-3)
}

fn finish(min: ScalarMin) -> Result<TemperatureFit> {
    if !min.value.is_finite() {
        return Err(Error::Numeric(format!("temperature objective is {}", min.value)));
    }
    Ok(TemperatureFit {
        temperature: Temperature::clamped(min.x),
        objective: min.value,
        degenerate: at_bound(min.x),
        evaluations: min.evaluations,
    })
}

fn all_identical(logits: &Matrix, labels: &[usize]) -> bool {
    let first = logits.row(0);
    labels.iter().all(|&y| y == labels[0]) && logits.iter_rows().all(|r| r == first)
}

/// Temperature minimizing the mean NLL on a labeled split.
///
/// Identical rows with identical labels carry no temperature information;
/// that case returns `T_MAX` with the degenerate flag set.
pub fn fit_temperature_nll(logits: &Matrix, labels: &[usize]) -> Result<TemperatureFit> {
    check_logits(logits)?;
    metrics::check_labels(labels, logits.rows(), logits.cols())?;
    let mut buf = vec![0.0; logits.cols()];
    if all_identical(logits, labels) {
        return Ok(TemperatureFit {
            temperature: Temperature(T_MAX),
            objective: mean_nll_at(logits, labels, T_MAX, &mut buf),
            degenerate: true,
            evaluations: 1,
        });
    }
    let min = bracketed_log_minimize(
        |t| mean_nll_at(logits, labels, t, &mut buf),
        T_MIN,
        T_MAX,
        T_GRID_POINTS,
        T_TOL,
    );
    finish(min)
}

/// Temperature scaling fit on labeled target data. Benchmark-only.
pub fn fit_oracle_temperature(target_logits: &Matrix, target_labels: &[usize]) -> Result<TemperatureFit> {
    fit_temperature_nll(target_logits, target_labels)
}

/// Temperature minimizing the importance-weighted mean Brier score
/// `sum_i w_i BS_i / sum_i w_i`.
pub fn fit_cpcs_temperature(logits: &Matrix, labels: &[usize], weights: &[f64]) -> Result<TemperatureFit> {
    check_logits(logits)?;
    metrics::check_labels(labels, logits.rows(), logits.cols())?;
    metrics::check_weights(weights, logits.rows())?;
    let total: f64 = weights.iter().sum();
    let mut buf = vec![0.0; logits.cols()];
    let min = bracketed_log_minimize(
        |t| weighted_brier_at(logits, labels, weights, total, t, &mut buf),
        T_MIN,
        T_MAX,
        T_GRID_POINTS,
        T_TOL,
    );
    finish(min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineKind {
    Vector,
    Matrix,
}

/// Affine logit map `scale * z + bias`. Vector scaling keeps `scale`
/// diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineScaleParam {
    pub kind: AffineKind,
    /// K x K, row-major.
    pub scale: Matrix,
    pub bias: Vec<f64>,
}

impl AffineScaleParam {
    pub fn identity(kind: AffineKind, classes: usize) -> Self {
        let mut scale = Matrix::zeros(classes, classes);
        for k in 0..classes {
            scale.row_mut(k)[k] = 1.0;
        }
        Self {
            kind,
            scale,
            bias: vec![0.0; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn map_row(&self, z: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.bias[k]
                + match self.kind {
                    AffineKind::Vector => self.scale.get(k, k) * z[k],
                    AffineKind::Matrix => self.scale.row(k).iter().zip(z).map(|(a, b)| a * b).sum(),
                };
        }
    }

    /// Transformed logits.
    pub fn apply(&self, logits: &Matrix) -> Result<Matrix> {
        if logits.cols() != self.num_classes() {
            return Err(Error::LengthMismatch {
                what: "logit columns",
                expected: self.num_classes(),
                got: logits.cols(),
            });
        }
        let mut out = Matrix::zeros(logits.rows(), logits.cols());
        for i in 0..logits.rows() {
            self.map_row(logits.row(i), out.row_mut(i));
        }
        Ok(out)
    }

    pub fn calibrate(&self, logits: &Matrix) -> Result<ProbabilitySet> {
        softmax_with_temperature(&self.apply(logits)?, Temperature::IDENTITY)
    }
}

/// Gradient-descent settings for affine scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once an iteration improves the loss by less than this.
    pub min_improvement: f64,
    /// Force every diagonal scale entry to share one value.
    pub tied_scale: bool,
    pub fit_bias: bool,
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iterations: 2000,
            min_improvement: 1e-8,
            tied_scale: false,
            fit_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub params: AffineScaleParam,
    /// Mean NLL at the returned parameters.
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    /// Set when the split is small for the number of free parameters.
    pub undersized: bool,
}

/// Mean NLL and its gradient with respect to (scale, bias).
fn affine_loss_grad(
    params: &AffineScaleParam,
    logits: &Matrix,
    labels: &[usize],
    grad_scale: &mut Matrix,
    grad_bias: &mut [f64],
) -> f64 {
    let k = params.num_classes();
    let n = labels.len() as f64;
    let mut mapped = vec![0.0; k];
    let mut p = vec![0.0; k];
    grad_scale.fill(0.0);
    grad_bias.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        params.map_row(z, &mut mapped);
        softmax_into(&mapped, 1.0, &mut p);
        loss -= p[y].max(metrics::NLL_CLAMP).ln();
        for r in 0..k {
            let g = (p[r] - if r == y { 1.0 } else { 0.0 }) / n;
            grad_bias[r] += g;
            match params.kind {
                AffineKind::Vector => grad_scale.row_mut(r)[r] += g * z[r],
                AffineKind::Matrix => {
                    for (gs, zc) in grad_scale.row_mut(r).iter_mut().zip(z) {
                        *gs += g * zc;
                    }
                }
            }
        }
    }
    loss / n
}

/// Full-batch gradient descent on mean NLL from identity scale, zero bias.
pub fn fit_affine(logits: &Matrix, labels: &[usize], kind: AffineKind, config: AffineConfig) -> Result<AffineFit> {
    check_logits(logits)?;
    let k = logits.cols();
    metrics::check_labels(labels, logits.rows(), k)?;
    if logits.rows() < k {
        return Err(Error::InvalidParameter(format!(
            "affine scaling needs at least {k} samples, got {}",
            logits.rows()
        )));
    }
    let undersized = kind == AffineKind::Matrix && logits.rows() < k * k;

    let mut params = AffineScaleParam::identity(kind, k);
    let mut grad_scale = Matrix::zeros(k, k);
    let mut grad_bias = vec![0.0; k];
    let initial_loss = affine_loss_grad(&params, logits, labels, &mut grad_scale, &mut grad_bias);
    let mut loss = initial_loss;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "affine scaling loss became non-finite at iteration {iterations}"
            )));
        }
        let lr = config.learning_rate;
        if config.tied_scale {
            let g: f64 = (0..k).map(|r| grad_scale.get(r, r)).sum();
            for r in 0..k {
                params.scale.row_mut(r)[r] -= lr * g;
            }
        } else {
            for r in 0..k {
                match kind {
                    AffineKind::Vector => params.scale.row_mut(r)[r] -= lr * grad_scale.get(r, r),
                    AffineKind::Matrix => {
                        for (s, g) in params.scale.row_mut(r).iter_mut().zip(grad_scale.row(r)) {
                            *s -= lr * g;
                        }
                    }
                }
            }
        }
        if config.fit_bias {
            for (b, g) in params.bias.iter_mut().zip(&grad_bias) {
                *b -= lr * g;
            }
        }
        iterations += 1;
        let next = affine_loss_grad(&params, logits, labels, &mut grad_scale, &mut grad_bias);
        let improvement = loss - next;
        loss = next;
        if improvement.abs() < config.min_improvement {
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("affine scaling loss is non-finite".into()));
    }
    Ok(AffineFit {
        params,
        loss,
        initial_loss,
        iterations,
        undersized,
    })
}

pub fn fit_vector_scaling(logits: &Matrix, labels: &[usize]) -> Result<AffineFit> {
    fit_affine(logits, labels, AffineKind::Vector, AffineConfig::default())
}

pub fn fit_matrix_scaling(logits: &Matrix, labels: &[usize]) -> Result<AffineFit> {
    fit_affine(logits, labels, AffineKind::Matrix, AffineConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_example() {
        let logits = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let p = softmax_with_temperature(&logits, Temperature::IDENTITY).unwrap();
        assert_abs_diff_eq!(p.probs().get(0, 0), 0.8807970779778823, epsilon = 1e-12);
        assert_abs_diff_eq!(p.probs().get(0, 1), 0.11920292202211755, epsilon = 1e-12);
    }

    #[test]
    fn large_temperature_is_near_uniform() {
        let logits = Matrix::from_rows(&[[2.0, -2.0, 0.5], [-1.0, 1.9, 0.0]]).unwrap();
        let p = softmax_with_temperature(&logits, Temperature::new(T_MAX).unwrap()).unwrap();
        for row in p.probs().iter_rows() {
            for v in row {
                assert!((v - 1.0 / 3.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        let bad = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(matches!(
            softmax_with_temperature(&bad, Temperature::IDENTITY),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn degenerate_input_returns_upper_bound() {
        let logits = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let fit = fit_temperature_nll(&logits, &[0, 0, 0]).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.temperature.value(), T_MAX);
    }

    #[test]
    fn cpcs_single_confident_sample_hits_bound() {
        let logits = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0], [1.0, 0.5]]).unwrap();
        let fit = fit_cpcs_temperature(&logits, &[0, 0, 1], &[1.0, 0.0, 0.0]).unwrap();
        assert!(fit.degenerate);
        assert_abs_diff_eq!(fit.temperature.value(), T_MIN, epsilon = 1e-3);
    }

    #[test]
    fn affine_identity_is_noop() {
        let logits = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        for kind in [AffineKind::Vector, AffineKind::Matrix] {
            let id = AffineScaleParam::identity(kind, 3);
            assert_eq!(id.apply(&logits).unwrap(), logits);
        }
    }

    #[test]
    fn affine_needs_k_samples() {
        let logits = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        assert!(fit_vector_scaling(&logits, &[0]).is_err());
    }
}
