//! Calibration metrics over probability vectors.
//!
//! Expected calibration error partitions confidences into `B` equal-width
//! bins on `[0, 1]`. Bin `m` (1-based) covers `((m-1)/B, m/B]`; bin 1 also
//! takes confidence 0. The score is the mass-weighted mean absolute gap
//! between per-bin accuracy and per-bin mean confidence.
//!
//! Every routine here is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor applied to the true-class probability before taking its log.
pub const NLL_CLAMP: f64 = 1e-12;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Per-class probabilities plus the derived argmax predictions and
/// confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySet {
    probs: Matrix,
    predictions: Vec<usize>,
    confidences: Vec<f64>,
}

impl ProbabilitySet {
    /// Validates that every row is a probability vector.
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.cols() == 0 {
            return Err(Error::Empty("probability classes"));
        }
        for (i, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "row {i} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self::from_normalized(probs))
    }

    /// Skips validation; the caller guarantees normalized rows.
    pub(crate) fn from_normalized(probs: Matrix) -> Self {
        let mut predictions = Vec::with_capacity(probs.rows());
        let mut confidences = Vec::with_capacity(probs.rows());
        for row in probs.iter_rows() {
            let (k, c) = argmax(row);
            predictions.push(k);
            confidences.push(c);
        }
        Self {
            probs,
            predictions,
            confidences,
        }
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn into_matrix(self) -> Matrix {
        self.probs
    }

    /// 1.0 where the prediction matches the label, else 0.0.
    pub fn correctness(&self, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_labels(labels)?;
        Ok(self
            .predictions
            .iter()
            .zip(labels)
            .map(|(p, y)| if p == y { 1.0 } else { 0.0 })
            .collect())
    }

    pub(crate) fn check_labels(&self, labels: &[usize]) -> Result<()> {
        check_labels(labels, self.len(), self.num_classes())
    }
}

/// Index and value of the row maximum; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_val = row[0];
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    (best, best_val)
}

pub(crate) fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("samples"));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: n,
            got: labels.len(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    Ok(())
}

/// Validates a weight sequence against `n` samples.
pub(crate) fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: n,
            got: weights.len(),
        });
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "weight {i} is negative or non-finite ({})",
            weights[i]
        )));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    Ok(())
}

/// Number of equal-width confidence bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub num_bins: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self { num_bins: 15 }
    }
}

impl BinningConfig {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::InvalidParameter("num_bins must be at least 1".into()));
        }
        Ok(Self { num_bins })
    }

    /// Upper edge of 0-based bin `m`, i.e. `(m + 1) / B`.
    #[inline]
    pub fn upper_edge(&self, m: usize) -> f64 {
        (m + 1) as f64 / self.num_bins as f64
    }

    /// 0-based bin for a confidence in `[0, 1]`.
    ///
    /// The arithmetic guess `ceil(c * B) - 1` can land one bin off near an
    /// edge, so it is corrected against the same edge values a linear scan
    /// would compare with.
    pub fn bin_index(&self, confidence: f64) -> usize {
        let b = self.num_bins;
        let mut m = ((confidence * b as f64).ceil() as isize - 1).clamp(0, b as isize - 1) as usize;
        while m > 0 && confidence <= self.upper_edge(m - 1) {
            m -= 1;
        }
        while m + 1 < b && confidence > self.upper_edge(m) {
            m += 1;
        }
        m
    }
}

/// One reliability-diagram bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Total weight in the bin; equals `count` for unweighted scores.
    pub weight: f64,
    /// `None` for an empty bin.
    pub accuracy: Option<f64>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<ReliabilityBin>,
    pub total_weight: f64,
    pub ece: f64,
}

impl ReliabilityBins {
    /// Recomputes ECE from the stored bin table.
    pub fn recompute_ece(&self) -> f64 {
        self.bins
            .iter()
            .map(|b| match (b.accuracy, b.confidence) {
                (Some(a), Some(c)) => (b.weight / self.total_weight) * (a - c).abs(),
                _ => 0.0,
            })
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

fn binned<W: Fn(usize) -> f64>(
    confidences: &[f64],
    correct: &[f64],
    weight: W,
    config: BinningConfig,
) -> ReliabilityBins {
    let b = config.num_bins;
    let mut counts = vec![0usize; b];
    let mut mass = vec![0.0; b];
    let mut acc_sum = vec![0.0; b];
    let mut conf_sum = vec![0.0; b];
    let mut total = 0.0;
    for (i, (&c, &r)) in confidences.iter().zip(correct).enumerate() {
        let w = weight(i);
        let m = config.bin_index(c);
        counts[m] += 1;
        mass[m] += w;
        acc_sum[m] += w * r;
        conf_sum[m] += w * c;
        total += w;
    }

    let mut ece = 0.0;
    let bins = (0..b)
        .map(|m| {
            let lower = m as f64 / b as f64;
            let upper = config.upper_edge(m);
            if mass[m] > 0.0 {
                let a = acc_sum[m] / mass[m];
                let c = conf_sum[m] / mass[m];
                ece += (mass[m] / total) * (a - c).abs();
                ReliabilityBin {
                    lower,
                    upper,
                    count: counts[m],
                    weight: mass[m],
                    accuracy: Some(a),
                    confidence: Some(c),
                }
            } else {
                ReliabilityBin {
                    lower,
                    upper,
                    count: counts[m],
                    weight: mass[m],
                    accuracy: None,
                    confidence: None,
                }
            }
        })
        .collect();
    ReliabilityBins {
        bins,
        total_weight: total,
        ece,
    }
}

/// Expected calibration error with its reliability-diagram bins.
pub fn ece(probs: &ProbabilitySet, labels: &[usize], bins: BinningConfig) -> Result<ReliabilityBins> {
    let correct = probs.correctness(labels)?;
    Ok(binned(probs.confidences(), &correct, |_| 1.0, bins))
}

/// ECE where every sample carries a nonnegative weight.
///
/// Per-bin accuracy and confidence are weighted means, and a bin's mass is
/// its share of the total weight. Unit weights reproduce [`ece`] exactly.
pub fn weighted_ece(
    probs: &ProbabilitySet,
    labels: &[usize],
    weights: &[f64],
    bins: BinningConfig,
) -> Result<ReliabilityBins> {
    let correct = probs.correctness(labels)?;
    check_weights(weights, probs.len())?;
    Ok(binned(probs.confidences(), &correct, |i| weights[i], bins))
}

/// Summed negative log-likelihood of the true classes.
pub fn nll(probs: &ProbabilitySet, labels: &[usize]) -> Result<f64> {
    probs.check_labels(labels)?;
    Ok(probs
        .probs()
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -row[y].max(NLL_CLAMP).ln())
        .sum())
}

/// [`nll`] divided by the sample count.
pub fn nll_mean(probs: &ProbabilitySet, labels: &[usize]) -> Result<f64> {
    Ok(nll(probs, labels)? / probs.len() as f64)
}

/// Per-sample Brier terms `(1/K) * sum_k (p_k - onehot_k)^2`.
pub fn brier_terms(probs: &ProbabilitySet, labels: &[usize]) -> Result<Vec<f64>> {
    probs.check_labels(labels)?;
    let k = probs.num_classes() as f64;
    Ok(probs
        .probs()
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(j, &p)| {
                    let target = if j == y { 1.0 } else { 0.0 };
                    (p - target) * (p - target)
                })
                .sum::<f64>()
                / k
        })
        .collect())
}

/// Mean Brier score, normalized by the class count.
pub fn brier(probs: &ProbabilitySet, labels: &[usize]) -> Result<f64> {
    let terms = brier_terms(probs, labels)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn accuracy(probs: &ProbabilitySet, labels: &[usize]) -> Result<f64> {
    let correct = probs.correctness(labels)?;
    Ok(correct.iter().sum::<f64>() / correct.len() as f64)
}

/// Per-sample `|1(prediction correct) - confidence|`, each in `[0, 1]`.
pub fn per_sample_residuals(probs: &ProbabilitySet, labels: &[usize]) -> Result<Vec<f64>> {
    let correct = probs.correctness(labels)?;
    Ok(correct
        .iter()
        .zip(probs.confidences())
        .map(|(r, c)| (r - c).abs())
        .collect())
}

/// Per-sample signed contributions to the weighted ECE.
///
/// Sample `i` in bin `m` contributes `s_m * (r_i - c_i)`, where `r_i` is its
/// correctness, `c_i` its confidence and `s_m` the sign of the bin's weighted
/// accuracy-confidence gap. Then `sum_i w_i * ell_i = W * weighted_ece`, so
/// `(1/n) * sum_i w_i * ell_i` is an importance-weighted calibration error
/// that decomposes per sample. Unit weights give `mean(ell) = ece`.
pub fn ece_contributions(
    probs: &ProbabilitySet,
    labels: &[usize],
    weights: &[f64],
    bins: BinningConfig,
) -> Result<Vec<f64>> {
    let correct = probs.correctness(labels)?;
    check_weights(weights, probs.len())?;
    Ok(signed_contributions(probs.confidences(), &correct, weights, bins))
}

pub(crate) fn signed_contributions(
    confidences: &[f64],
    correct: &[f64],
    weights: &[f64],
    bins: BinningConfig,
) -> Vec<f64> {
    let mut gap = vec![0.0; bins.num_bins];
    let idx: Vec<usize> = confidences.iter().map(|&c| bins.bin_index(c)).collect();
    for ((&m, (&c, &r)), &w) in idx.iter().zip(confidences.iter().zip(correct)).zip(weights) {
        gap[m] += w * (r - c);
    }
    idx.iter()
        .zip(confidences.iter().zip(correct))
        .map(|(&m, (&c, &r))| {
            let sign = if gap[m] >= 0.0 { 1.0 } else { -1.0 };
            sign * (r - c)
        })
        .collect()
}
