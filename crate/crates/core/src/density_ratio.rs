//! Importance weights `w(x) = q(x) / p(x)` from a logistic-regression domain
//! discriminator.
//!
//! The discriminator is trained to output `H(x) = P(source | x)` on splits of
//! equal size, so the prior ratio is one and `w(x) = (1 - H(x)) / H(x)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor and ceiling margin applied to `H(x)` before taking the ratio.
pub const PROBABILITY_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    SourceTrain,
    SourceVal,
    Target,
}

/// Penultimate-layer features for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Matrix,
    tag: DomainTag,
}

impl FeatureSet {
    pub fn new(features: Matrix, tag: DomainTag) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::NonFiniteInput("features"));
        }
        Ok(Self { features, tag })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn tag(&self) -> DomainTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Resamples the smaller split with replacement until both have equal size.
///
/// The smaller split keeps all of its rows and gains uniformly drawn
/// duplicates; the larger split is returned unchanged.
pub fn upsample_balance(source: &FeatureSet, target: &FeatureSet, seed: u64) -> Result<(FeatureSet, FeatureSet)> {
    if source.is_empty() {
        return Err(Error::Empty("source features"));
    }
    if target.is_empty() {
        return Err(Error::Empty("target features"));
    }
    let grow = |small: &FeatureSet, size: usize| -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = small.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.extend((n..size).map(|_| rng.random_range(0..n)));
        FeatureSet {
            features: small.features.select_rows(&idx),
            tag: small.tag,
        }
    };
    Ok(match source.len().cmp(&target.len()) {
        std::cmp::Ordering::Equal => (source.clone(), target.clone()),
        std::cmp::Ordering::Less => (grow(source, target.len()), target.clone()),
        std::cmp::Ordering::Greater => (source.clone(), grow(target, source.len())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// L2 penalty on the weights; `None` means `1 / n` over the pooled rows.
    pub l2_strength: Option<f64>,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            l2_strength: None,
            learning_rate: 0.1,
            max_iterations: 5000,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    fn fit(a: &Matrix, b: &Matrix) -> Self {
        let d = a.cols();
        let n = (a.rows() + b.rows()) as f64;
        let mut mean = vec![0.0; d];
        for row in a.iter_rows().chain(b.iter_rows()) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in a.iter_rows().chain(b.iter_rows()) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // Constant columns keep unit scale.
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }

    fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.apply(x.row(i), out.row_mut(i));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub final_learning_rate: f64,
}

/// Logistic model of `P(source | x)` on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_strength: f64,
    pub standardizer: Standardizer,
    pub diagnostics: TrainingDiagnostics,
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl DomainClassifier {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score_standardized(&self, z: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
    }

    /// `H(x) = P(source | x)` for a raw feature row.
    pub fn source_probability(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; x.len()];
        self.standardizer.apply(x, &mut z);
        sigmoid(self.score_standardized(&z))
    }
}

struct Objective<'a> {
    x: &'a Matrix,
    labels: &'a [f64],
    l2: f64,
}

impl Objective<'_> {
    /// Loss at `(w, b)`; writes the weight gradient into `gw` and returns
    /// `(loss, bias gradient)`. One pass and one `exp` per row.
    fn evaluate(&self, w: &[f64], b: f64, gw: &mut [f64]) -> (f64, f64) {
        let n = self.x.rows() as f64;
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        let mut data = 0.0;
        for (row, &d) in self.x.iter_rows().zip(self.labels) {
            let s = b + w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
            let e = (-s.abs()).exp();
            // softplus(s) - d s, and sigmoid(s), sharing e = exp(-|s|)
            data += s.max(0.0) + (1.0 + e).ln() - d * s;
            let sig = if s >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            let r = sig - d;
            gb += r;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        for (g, wi) in gw.iter_mut().zip(w) {
            *g = *g / n + self.l2 * wi;
        }
        let loss = data / n + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        (loss, gb / n)
    }
}

/// Fits the L2-regularized discriminator by full-batch gradient descent
/// from zero. Source rows are labeled 1, target rows 0.
///
/// The step size halves whenever a step would increase the loss; training
/// stops once the gradient norm falls below the tolerance.
pub fn train_domain_classifier(
    source: &FeatureSet,
    target: &FeatureSet,
    config: ClassifierConfig,
) -> Result<DomainClassifier> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("domain classifier training split"));
    }
    if source.dim() != target.dim() {
        return Err(Error::LengthMismatch {
            what: "target feature dimension",
            expected: source.dim(),
            got: target.dim(),
        });
    }
    if source.dim() == 0 {
        return Err(Error::Empty("feature dimensions"));
    }
    if source.len() != target.len() {
        return Err(Error::InvalidParameter(format!(
            "domain splits must be balanced (source {}, target {}); upsample first",
            source.len(),
            target.len()
        )));
    }

    let standardizer = Standardizer::fit(source.features(), target.features());
    let x = standardizer
        .transform(source.features())
        .vstack(&standardizer.transform(target.features()))?;
    let mut labels = vec![1.0; source.len()];
    labels.extend(std::iter::repeat_n(0.0, target.len()));
    let l2 = config.l2_strength.unwrap_or(1.0 / x.rows() as f64);
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::InvalidParameter(format!("l2 strength must be nonnegative, got {l2}")));
    }
    let objective = Objective {
        x: &x,
        labels: &labels,
        l2,
    };

    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    let mut lr = config.learning_rate;
    let (mut loss, mut gb) = objective.evaluate(&w, b, &mut gw);
    let norm = |gb: f64, gw: &[f64]| (gb * gb + gw.iter().map(|g| g * g).sum::<f64>()).sqrt();
    let mut grad_norm = norm(gb, &gw);
    let mut iterations = 0;
    let mut candidate = vec![0.0; d];
    let mut candidate_grad = vec![0.0; d];
    while iterations < config.max_iterations && grad_norm >= config.gradient_tolerance {
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "domain classifier loss became non-finite at iteration {iterations}"
            )));
        }
        iterations += 1;
        for ((c, wi), g) in candidate.iter_mut().zip(&w).zip(&gw) {
            *c = wi - lr * g;
        }
        let cb = b - lr * gb;
        let (next, next_gb) = objective.evaluate(&candidate, cb, &mut candidate_grad);
        if next > loss {
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
            continue;
        }
        std::mem::swap(&mut w, &mut candidate);
        std::mem::swap(&mut gw, &mut candidate_grad);
        b = cb;
        loss = next;
        gb = next_gb;
        grad_norm = norm(gb, &gw);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("domain classifier loss is non-finite".into()));
    }
    Ok(DomainClassifier {
        weights: w,
        bias: b,
        l2_strength: l2,
        standardizer,
        diagnostics: TrainingDiagnostics {
            final_loss: loss,
            iterations,
            converged: grad_norm < config.gradient_tolerance,
            gradient_norm: grad_norm,
            final_learning_rate: lr,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Raw,
    LambdaTransformed,
}

/// Per-sample importance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
    kind: WeightKind,
    lambda_used: Option<f64>,
    max_weight: f64,
}

impl WeightVector {
    /// Wraps raw weights, rejecting negative or non-finite entries.
    pub fn raw(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("weights"));
        }
        if let Some(i) = values.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight {i} is negative or non-finite ({})",
                values[i]
            )));
        }
        let max_weight = values.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            values,
            kind: WeightKind::Raw,
            lambda_used: None,
            max_weight,
        })
    }

    pub fn ones(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            kind: WeightKind::Raw,
            lambda_used: None,
            max_weight: 1.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn lambda_used(&self) -> Option<f64> {
        self.lambda_used
    }

    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Rows of a subsample, keeping kind and lambda.
    pub fn select(&self, indices: &[usize]) -> Self {
        let values: Vec<f64> = indices.iter().map(|&i| self.values[i]).collect();
        let max_weight = values.iter().copied().fold(0.0, f64::max);
        Self {
            values,
            kind: self.kind,
            lambda_used: self.lambda_used,
            max_weight,
        }
    }
}

/// `(1 - h) / h` with `h` clamped to `[eps, 1 - eps]`.
pub fn weight_from_probability(h: f64) -> f64 {
    let h = h.clamp(PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON);
    (1.0 - h) / h
}

/// Raw importance weights on an evaluation split (normally source
/// validation features).
pub fn estimate_weights(classifier: &DomainClassifier, eval_features: &FeatureSet) -> Result<WeightVector> {
    if eval_features.dim() != classifier.dim() {
        return Err(Error::LengthMismatch {
            what: "evaluation feature dimension",
            expected: classifier.dim(),
            got: eval_features.dim(),
        });
    }
    let values = eval_features
        .features()
        .iter_rows()
        .map(|row| weight_from_probability(classifier.source_probability(row)))
        .collect();
    WeightVector::raw(values)
}

/// Elementwise power `w^lambda`, shrinking weights above one toward one.
pub fn lambda_transform(weights: &WeightVector, lambda: f64) -> Result<WeightVector> {
    if weights.kind != WeightKind::Raw {
        return Err(Error::InvalidParameter(
            "lambda transform expects raw weights".into(),
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let values: Vec<f64> = weights.values.iter().map(|w| w.powf(lambda)).collect();
    let max_weight = values.iter().copied().fold(0.0, f64::max);
    Ok(WeightVector {
        values,
        kind: WeightKind::LambdaTransformed,
        lambda_used: Some(lambda),
        max_weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fs(rows: &[&[f64]], tag: DomainTag) -> FeatureSet {
        FeatureSet::new(Matrix::from_rows(rows).unwrap(), tag).unwrap()
    }

    #[test]
    fn balanced_splits_unchanged() {
        let s = fs(&[&[1.0], &[2.0]], DomainTag::SourceTrain);
        let t = fs(&[&[3.0], &[4.0]], DomainTag::Target);
        let (a, b) = upsample_balance(&s, &t, 7).unwrap();
        assert_eq!(a, s);
        assert_eq!(b, t);
    }

    #[test]
    fn upsample_smaller_target() {
        let src: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let tgt: Vec<Vec<f64>> = (0..40).map(|i| vec![1000.0 + i as f64]).collect();
        let s = FeatureSet::new(Matrix::from_rows(&src).unwrap(), DomainTag::SourceTrain).unwrap();
        let t = FeatureSet::new(Matrix::from_rows(&tgt).unwrap(), DomainTag::Target).unwrap();
        let (a, b) = upsample_balance(&s, &t, 1).unwrap();
        assert_eq!(a, s);
        assert_eq!(b.len(), 100);
        for row in b.features().iter_rows() {
            assert!(tgt.iter().any(|r| r.as_slice() == row));
        }
        let (_, again) = upsample_balance(&s, &t, 1).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn empty_split_rejected() {
        let s = FeatureSet::new(Matrix::zeros(0, 1), DomainTag::SourceTrain).unwrap();
        let t = fs(&[&[1.0]], DomainTag::Target);
        assert!(upsample_balance(&s, &t, 0).is_err());
    }

    #[test]
    fn separated_points_give_negative_slope() {
        let s = fs(&[&[-1.0], &[-1.0]], DomainTag::SourceTrain);
        let t = fs(&[&[1.0], &[1.0]], DomainTag::Target);
        let config = ClassifierConfig {
            l2_strength: Some(1.0),
            ..Default::default()
        };
        let c = train_domain_classifier(&s, &t, config).unwrap();
        assert!(c.weights[0] < 0.0);
        assert!(c.diagnostics.converged);
        assert!(c.source_probability(&[-1.0]) > 0.5);
    }

    #[test]
    fn mirror_symmetric_data_has_zero_bias() {
        let src: Vec<Vec<f64>> = (0..50).map(|i| vec![0.1 * i as f64 - 1.3, 0.05 * i as f64]).collect();
        let tgt: Vec<Vec<f64>> = src.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let s = FeatureSet::new(Matrix::from_rows(&src).unwrap(), DomainTag::SourceTrain).unwrap();
        let t = FeatureSet::new(Matrix::from_rows(&tgt).unwrap(), DomainTag::Target).unwrap();
        let c = train_domain_classifier(&s, &t, ClassifierConfig::default()).unwrap();
        assert!(c.bias.abs() <= 1e-6, "bias {}", c.bias);
    }

    #[test]
    fn training_errors() {
        let s = fs(&[&[1.0, 2.0]], DomainTag::SourceTrain);
        let t = fs(&[&[1.0]], DomainTag::Target);
        assert!(matches!(
            train_domain_classifier(&s, &t, ClassifierConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
        let t = fs(&[&[1.0, 0.0], &[2.0, 0.0]], DomainTag::Target);
        assert!(train_domain_classifier(&s, &t, ClassifierConfig::default()).is_err());
    }

    #[test]
    fn weight_from_probability_examples() {
        assert_eq!(weight_from_probability(0.5), 1.0);
        assert_abs_diff_eq!(weight_from_probability(0.25), 3.0, epsilon = 1e-15);
        let eps = PROBABILITY_EPSILON;
        let w = weight_from_probability(1.0 - 1e-9);
        assert!(w.is_finite());
        assert_abs_diff_eq!(w, eps / (1.0 - eps), epsilon = 1e-15);
    }

    #[test]
    fn estimate_weights_dimension_check() {
        let s = fs(&[&[-1.0], &[-0.5]], DomainTag::SourceTrain);
        let t = fs(&[&[1.0], &[0.5]], DomainTag::Target);
        let c = train_domain_classifier(&s, &t, ClassifierConfig::default()).unwrap();
        let bad = fs(&[&[1.0, 2.0]], DomainTag::SourceVal);
        assert!(estimate_weights(&c, &bad).is_err());
        let ok = estimate_weights(&c, &fs(&[&[1.0]], DomainTag::SourceVal)).unwrap();
        assert_eq!(ok.kind(), WeightKind::Raw);
        assert!(ok.values()[0] > 1.0);
    }

    #[test]
    fn lambda_examples() {
        let w = WeightVector::raw(vec![9.0, 0.25, 1.0]).unwrap();
        let one = lambda_transform(&w, 1.0).unwrap();
        assert_eq!(one.values(), w.values());
        let zero = lambda_transform(&w, 0.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 1.0));
        let half = lambda_transform(&w, 0.5).unwrap();
        assert_abs_diff_eq!(half.values()[0], 3.0, epsilon = 1e-15);
        assert_eq!(half.kind(), WeightKind::LambdaTransformed);
        assert_eq!(half.lambda_used(), Some(0.5));
        assert_abs_diff_eq!(half.max_weight(), 3.0, epsilon = 1e-15);
        assert!(lambda_transform(&w, 1.5).is_err());
        assert!(lambda_transform(&w, -0.1).is_err());
        assert!(lambda_transform(&half, 0.5).is_err());
    }

    #[test]
    fn raw_weights_validated() {
        assert!(WeightVector::raw(vec![]).is_err());
        assert!(WeightVector::raw(vec![1.0, -0.5]).is_err());
        assert!(WeightVector::raw(vec![f64::INFINITY]).is_err());
    }
}
