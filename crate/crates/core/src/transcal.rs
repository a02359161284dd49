//! Transferable calibration: an importance-weighted estimate of the target
//! calibration error, with a learnable weight exponent `lambda` for bias
//! reduction and control variates for variance reduction, minimized jointly
//! over temperature and `lambda`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density_ratio::WeightVector;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{self, argmax, BinningConfig};
use crate::optimize::{log_grid, nelder_mead, Bounds};
use crate::scaling::{self, check_logits, Temperature, T_MAX, T_MIN};

pub const GRID_TEMPERATURES: usize = 40;
pub const GRID_LAMBDAS: usize = 11;
pub const REFINE_TOLERANCE: f64 = 1e-4;
pub const REFINE_MAX_EVALUATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Importance-weighted estimate without variance reduction.
    PlainIwece,
    /// One control variate on the transformed weights.
    CvWeightsOnly,
    /// One control variate on prediction correctness.
    CvCorrectnessOnly,
    /// Both variates with jointly optimal coefficients.
    CvParallel,
    /// Weight variate, then correctness variate on the adjusted samples.
    #[default]
    CvSerial,
}

impl EstimatorMode {
    pub const ALL: [EstimatorMode; 5] = [
        EstimatorMode::PlainIwece,
        EstimatorMode::CvWeightsOnly,
        EstimatorMode::CvCorrectnessOnly,
        EstimatorMode::CvParallel,
        EstimatorMode::CvSerial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::PlainIwece => "plain_iwece",
            EstimatorMode::CvWeightsOnly => "cv_weights_only",
            EstimatorMode::CvCorrectnessOnly => "cv_correctness_only",
            EstimatorMode::CvParallel => "cv_parallel",
            EstimatorMode::CvSerial => "cv_serial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.replace('-', "_");
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Per-sample calibration loss fed to the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSurrogate {
    /// Signed bin contributions; the weighted mean is the weighted binned ECE.
    #[default]
    SignedBin,
    /// `|correct - confidence|` per sample.
    Residual,
}

/// Whether `lambda` is searched or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    Learn,
    Frozen(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransCalConfig {
    pub mode: EstimatorMode,
    pub bins: BinningConfig,
    pub lambda: LambdaPolicy,
    pub surrogate: LossSurrogate,
    /// Rényi orders reported with each solution.
    pub renyi_alphas: Vec<f64>,
    /// Expected correctness under calibration. `None` takes the mean
    /// source-validation confidence at the NLL-fitted temperature.
    pub reference_confidence: Option<f64>,
}

impl Default for TransCalConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::CvSerial,
            bins: BinningConfig::default(),
            lambda: LambdaPolicy::Learn,
            surrogate: LossSurrogate::SignedBin,
            renyi_alphas: vec![1.0],
            reference_confidence: None,
        }
    }
}

impl TransCalConfig {
    pub fn with_mode(mode: EstimatorMode) -> Self {
        Self { mode, ..Self::default() }
    }

    /// Variant with `lambda` fixed at one, leaving weights untouched.
    pub fn without_bias(mut self) -> Self {
        self.lambda = LambdaPolicy::Frozen(1.0);
        self
    }
}

/// Coefficient of one control variate and the statistics it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVariateCoefficients {
    pub eta: f64,
    pub tau: f64,
    pub cov_ut: f64,
    pub var_t: f64,
    /// The variate had no variance, so no correction was applied.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariateOutcome {
    pub estimate: f64,
    /// `u_i + eta (t_i - tau)`.
    pub adjusted: Vec<f64>,
    pub coefficients: ControlVariateCoefficients,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample covariance with `n - 1` in the denominator.
fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

/// Sample variance with `n - 1` in the denominator.
pub fn sample_variance(x: &[f64]) -> f64 {
    covariance(x, x)
}

fn negligible_variance(var: f64, t: &[f64]) -> bool {
    let scale = t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
    !(var > f64::EPSILON * scale)
}

fn check_pair(u: &[f64], t: &[f64]) -> Result<()> {
    if u.len() != t.len() {
        return Err(Error::LengthMismatch {
            what: "control variate samples",
            expected: u.len(),
            got: t.len(),
        });
    }
    if u.len() < 2 {
        return Err(Error::InvalidParameter(
            "control variates need at least two samples".into(),
        ));
    }
    if u.iter().chain(t).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("control variate samples"));
    }
    Ok(())
}

/// Corrects `mean(u)` with the variate `t` of known mean `tau`, using the
/// variance-minimizing coefficient `eta = -Cov(u, t) / Var(t)`.
pub fn apply_control_variate(u: &[f64], t: &[f64], tau: f64) -> Result<ControlVariateOutcome> {
    check_pair(u, t)?;
    let var_t = sample_variance(t);
    let cov_ut = covariance(u, t);
    let degenerate = negligible_variance(var_t, t);
    let eta = if degenerate { 0.0 } else { -cov_ut / var_t };
    Ok(ControlVariateOutcome {
        estimate: mean(u) + eta * (mean(t) - tau),
        adjusted: u.iter().zip(t).map(|(ui, ti)| ui + eta * (ti - tau)).collect(),
        coefficients: ControlVariateCoefficients {
            eta,
            tau,
            cov_ut,
            var_t,
            degenerate,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialOutcome {
    pub estimate: f64,
    pub weight_stage: ControlVariateCoefficients,
    pub correctness_stage: ControlVariateCoefficients,
}

/// Weight variate (`tau = 1`) followed by the correctness variate
/// (`tau = mean_confidence`) applied to the stage-one adjusted samples.
///
/// A constant correctness sequence skips the second stage and sets its
/// degenerate flag.
pub fn serial_control_variate(
    u: &[f64],
    weights: &WeightVector,
    correctness: &[f64],
    mean_confidence: f64,
) -> Result<SerialOutcome> {
    serial_raw(u, weights.values(), correctness, mean_confidence)
}

fn serial_raw(u: &[f64], w: &[f64], r: &[f64], c: f64) -> Result<SerialOutcome> {
    let first = apply_control_variate(u, w, 1.0)?;
    let second = apply_control_variate(&first.adjusted, r, c)?;
    Ok(SerialOutcome {
        estimate: second.estimate,
        weight_stage: first.coefficients,
        correctness_stage: second.coefficients,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelOutcome {
    pub estimate: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// The 2x2 system was singular and a single variate was used instead.
    pub singular: bool,
}

/// Both variates at once: solves
/// `[[Var t1, Cov12], [Cov12, Var t2]] eta = -[Cov(u,t1), Cov(u,t2)]`.
pub fn parallel_control_variate(u: &[f64], t1: &[f64], tau1: f64, t2: &[f64], tau2: f64) -> Result<ParallelOutcome> {
    check_pair(u, t1)?;
    check_pair(u, t2)?;
    let v1 = sample_variance(t1);
    let v2 = sample_variance(t2);
    let c12 = covariance(t1, t2);
    let cu1 = covariance(u, t1);
    let cu2 = covariance(u, t2);
    let dead1 = negligible_variance(v1, t1);
    let dead2 = negligible_variance(v2, t2);
    let det = v1 * v2 - c12 * c12;

    let (eta1, eta2, singular) = if dead1 && dead2 {
        (0.0, 0.0, true)
    } else if dead1 {
        (0.0, -cu2 / v2, true)
    } else if dead2 {
        (-cu1 / v1, 0.0, true)
    } else if c12 == 0.0 {
        (-cu1 / v1, -cu2 / v2, false)
    } else if !(det > 1e-12 * v1 * v2) {
        (-cu1 / v1, 0.0, true)
    } else {
        (
            (-cu1 * v2 + cu2 * c12) / det,
            (-cu2 * v1 + cu1 * c12) / det,
            false,
        )
    };
    Ok(ParallelOutcome {
        estimate: mean(u) + eta1 * (mean(t1) - tau1) + eta2 * (mean(t2) - tau2),
        eta1,
        eta2,
        singular,
    })
}

/// `(1/n) sum_i w_i l_i` for precomputed per-sample losses.
pub fn importance_weighted_mean(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: losses.len(),
            got: weights.len(),
        });
    }
    if losses.is_empty() {
        return Err(Error::Empty("losses"));
    }
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / losses.len() as f64)
}

/// Importance-weighted mean residual `(1/n) sum_i w_i |r_i - c_i|` at
/// temperature `t`.
pub fn iwece_objective(logits: &Matrix, labels: &[usize], weights: &WeightVector, t: Temperature) -> Result<f64> {
    let probs = scaling::softmax_with_temperature(logits, t)?;
    let residuals = metrics::per_sample_residuals(&probs, labels)?;
    importance_weighted_mean(&residuals, weights.values())
}

/// Empirical `d_{alpha+1} = (mean w^(alpha+1))^(1/alpha)`; overflow reports
/// `+inf`.
pub fn renyi_diagnostic(weights: &WeightVector, alpha: f64) -> Result<f64> {
    renyi_of(weights.values(), alpha)
}

fn renyi_of(w: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if w.is_empty() {
        return Err(Error::Empty("weights"));
    }
    let m = w.iter().map(|v| v.powf(alpha + 1.0)).sum::<f64>() / w.len() as f64;
    let d = m.powf(1.0 / alpha);
    Ok(if d.is_finite() { d } else { f64::INFINITY })
}

/// How a bootstrap treats control-variate coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientPolicy {
    /// Re-estimate the coefficients on every resample.
    Refit,
    /// Keep the coefficients fitted on the full sample.
    Fixed,
}

/// One estimator evaluation with its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    /// Some requested variate had no variance and was skipped.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: f64,
    pub lambda: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenyiValue {
    pub alpha: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDiagnostics {
    pub max_weight_raw: f64,
    pub max_weight_transformed: f64,
    pub mean_weight_raw: f64,
    pub mean_weight_transformed: f64,
    pub renyi: Vec<RenyiValue>,
    pub reference_confidence: f64,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub degenerate_variate: bool,
    pub grid_evaluations: usize,
    pub refine_evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransCalSolution {
    pub t_star: Temperature,
    pub lambda_star: f64,
    pub objective_value: f64,
    pub mode: EstimatorMode,
    pub trace: Vec<TraceEntry>,
    pub diagnostics: SolutionDiagnostics,
}

/// Source-validation data prepared for repeated objective evaluations.
#[derive(Debug, Clone)]
pub struct TransCalProblem {
    logits: Matrix,
    correct: Vec<f64>,
    weights: Vec<f64>,
    config: TransCalConfig,
    reference_confidence: f64,
}

fn max_confidence(z: &[f64], t: f64) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    1.0 / z.iter().map(|&v| ((v - max) / t).exp()).sum::<f64>()
}

impl TransCalProblem {
    pub fn new(logits: &Matrix, labels: &[usize], raw_weights: &WeightVector, config: TransCalConfig) -> Result<Self> {
        check_logits(logits)?;
        metrics::check_labels(labels, logits.rows(), logits.cols())?;
        if raw_weights.len() != logits.rows() {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected: logits.rows(),
                got: raw_weights.len(),
            });
        }
        if raw_weights.lambda_used().is_some() {
            return Err(Error::InvalidParameter("expected raw weights".into()));
        }
        if raw_weights.values().iter().all(|&w| w == 0.0) {
            return Err(Error::DegenerateWeights(
                "density-ratio stage produced all-zero weights".into(),
            ));
        }
        if logits.rows() < 2 {
            return Err(Error::InvalidParameter(
                "at least two source-validation samples are required".into(),
            ));
        }
        if let LambdaPolicy::Frozen(l) = config.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {l}")));
            }
        }
        for &a in &config.renyi_alphas {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::InvalidParameter(format!("alpha must be positive, got {a}")));
            }
        }
        // Temperature scaling never changes the argmax, so correctness is fixed.
        let correct: Vec<f64> = logits
            .iter_rows()
            .zip(labels)
            .map(|(z, &y)| if argmax(z).0 == y { 1.0 } else { 0.0 })
            .collect();
        let reference_confidence = match config.reference_confidence {
            Some(c) if (0.0..=1.0).contains(&c) => c,
            Some(c) => {
                return Err(Error::InvalidParameter(format!(
                    "reference confidence must lie in [0, 1], got {c}"
                )))
            }
            None => {
                let fit = scaling::fit_temperature_nll(logits, labels)?;
                let t = fit.temperature.value();
                logits.iter_rows().map(|z| max_confidence(z, t)).sum::<f64>() / logits.rows() as f64
            }
        };
        Ok(Self {
            logits: logits.clone(),
            correct,
            weights: raw_weights.values().to_vec(),
            config,
            reference_confidence,
        })
    }

    pub fn config(&self) -> &TransCalConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.correct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correct.is_empty()
    }

    pub fn reference_confidence(&self) -> f64 {
        self.reference_confidence
    }

    pub fn correctness(&self) -> &[f64] {
        &self.correct
    }

    fn confidences(&self, t: f64) -> Vec<f64> {
        self.logits.iter_rows().map(|z| max_confidence(z, t)).collect()
    }

    /// The configured estimator at `(t, lambda)`.
    pub fn objective(&self, t: f64, lambda: f64) -> Result<Estimate> {
        self.estimate(t, lambda, self.config.mode)
    }

    /// Any estimator mode at `(t, lambda)`.
    pub fn estimate(&self, t: f64, lambda: f64, mode: EstimatorMode) -> Result<Estimate> {
        Temperature::new(t)?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        let conf = self.confidences(t);
        let w: Vec<f64> = self.weights.iter().map(|v| v.powf(lambda)).collect();
        self.estimate_on(&conf, &self.correct, &w, mode)
    }

    fn weighted_losses(&self, conf: &[f64], correct: &[f64], w: &[f64]) -> Vec<f64> {
        let losses: Vec<f64> = match self.config.surrogate {
            LossSurrogate::SignedBin => metrics::signed_contributions(conf, correct, w, self.config.bins),
            LossSurrogate::Residual => conf.iter().zip(correct).map(|(c, r)| (r - c).abs()).collect(),
        };
        losses.iter().zip(w).map(|(l, wi)| l * wi).collect()
    }

    fn estimate_on(&self, conf: &[f64], correct: &[f64], w: &[f64], mode: EstimatorMode) -> Result<Estimate> {
        let u = self.weighted_losses(conf, correct, w);
        let c = self.reference_confidence;
        let est = match mode {
            EstimatorMode::PlainIwece => Estimate {
                value: mean(&u),
                eta1: None,
                eta2: None,
                degenerate: false,
            },
            EstimatorMode::CvWeightsOnly => {
                let o = apply_control_variate(&u, w, 1.0)?;
                Estimate {
                    value: o.estimate,
                    eta1: Some(o.coefficients.eta),
                    eta2: None,
                    degenerate: o.coefficients.degenerate,
                }
            }
            EstimatorMode::CvCorrectnessOnly => {
                let o = apply_control_variate(&u, correct, c)?;
                Estimate {
                    value: o.estimate,
                    eta1: None,
                    eta2: Some(o.coefficients.eta),
                    degenerate: o.coefficients.degenerate,
                }
            }
            EstimatorMode::CvParallel => {
                let o = parallel_control_variate(&u, w, 1.0, correct, c)?;
                Estimate {
                    value: o.estimate,
                    eta1: Some(o.eta1),
                    eta2: Some(o.eta2),
                    degenerate: o.singular,
                }
            }
            EstimatorMode::CvSerial => {
                let o = serial_raw(&u, w, correct, c)?;
                Estimate {
                    value: o.estimate,
                    eta1: Some(o.weight_stage.eta),
                    eta2: Some(o.correctness_stage.eta),
                    degenerate: o.weight_stage.degenerate || o.correctness_stage.degenerate,
                }
            }
        };
        if !est.value.is_finite() {
            return Err(Error::Numeric(format!("estimator value is {}", est.value)));
        }
        Ok(est)
    }

    /// Estimator values on `resamples` bootstrap draws of the validation
    /// rows at fixed `(t, lambda)`. The reference confidence stays fixed;
    /// `coefficients` says whether control-variate coefficients are refit on
    /// every draw or held at their full-sample values.
    pub fn bootstrap(
        &self,
        t: f64,
        lambda: f64,
        mode: EstimatorMode,
        coefficients: CoefficientPolicy,
        resamples: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        Temperature::new(t)?;
        let conf = self.confidences(t);
        let w: Vec<f64> = self.weights.iter().map(|v| v.powf(lambda)).collect();
        let full = self.estimate_on(&conf, &self.correct, &w, mode)?;
        let (eta1, eta2) = (full.eta1.unwrap_or(0.0), full.eta2.unwrap_or(0.0));
        let c = self.reference_confidence;
        let n = self.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = vec![0usize; n];
        let (mut bc, mut br, mut bw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        (0..resamples)
            .map(|_| {
                idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
                for (k, &i) in idx.iter().enumerate() {
                    bc[k] = conf[i];
                    br[k] = self.correct[i];
                    bw[k] = w[i];
                }
                match coefficients {
                    CoefficientPolicy::Refit => self.estimate_on(&bc, &br, &bw, mode).map(|e| e.value),
                    CoefficientPolicy::Fixed => {
                        let u = self.weighted_losses(&bc, &br, &bw);
                        Ok(mean(&u) + eta1 * (mean(&bw) - 1.0) + eta2 * (mean(&br) - c))
                    }
                }
            })
            .collect()
    }

    /// Objective values on a `(t, lambda)` grid, one row per temperature.
    pub fn surface(&self, temperatures: &[f64], lambdas: &[f64]) -> Result<Matrix> {
        let mut out = Matrix::zeros(temperatures.len(), lambdas.len());
        for (i, &t) in temperatures.iter().enumerate() {
            for (j, &l) in lambdas.iter().enumerate() {
                out.row_mut(i)[j] = self.objective(t, l)?.value;
            }
        }
        Ok(out)
    }

    /// Coarse grid over `(T, lambda)` then Nelder-Mead on `(ln T, lambda)`
    /// from the best grid point.
    pub fn optimize(&self) -> Result<TransCalSolution> {
        let temps = log_grid(T_MIN, T_MAX, GRID_TEMPERATURES);
        let lambdas: Vec<f64> = match self.config.lambda {
            LambdaPolicy::Learn => (0..GRID_LAMBDAS)
                .map(|j| j as f64 / (GRID_LAMBDAS - 1) as f64)
                .collect(),
            LambdaPolicy::Frozen(l) => vec![l],
        };

        let mut trace = Vec::with_capacity(temps.len() * lambdas.len() + REFINE_MAX_EVALUATIONS);
        let mut best: Option<TraceEntry> = None;
        // Ascending T then lambda with a strict comparison breaks ties toward
        // the smaller T, then the smaller lambda.
        for &t in &temps {
            for &l in &lambdas {
                let e = TraceEntry {
                    t,
                    lambda: l,
                    objective: self.objective(t, l)?.value,
                };
                trace.push(e);
                if best.is_none_or(|b| e.objective < b.objective) {
                    best = Some(e);
                }
            }
        }
        let grid_evaluations = trace.len();
        let start = best.expect("grid is non-empty");

        let log_step = (T_MAX.ln() - T_MIN.ln()) / (GRID_TEMPERATURES - 1) as f64;
        let to_t = |x: f64| x.exp().clamp(T_MIN, T_MAX);
        let mut failure: Option<Error> = None;
        let (t_star, lambda_star, refine_evaluations, converged) = match self.config.lambda {
            LambdaPolicy::Learn => {
                let bounds = Bounds {
                    lower: vec![T_MIN.ln(), 0.0],
                    upper: vec![T_MAX.ln(), 1.0],
                };
                let r = nelder_mead(
                    |x| match self.objective(to_t(x[0]), x[1]) {
                        Ok(e) => {
                            trace.push(TraceEntry {
                                t: to_t(x[0]),
                                lambda: x[1],
                                objective: e.value,
                            });
                            e.value
                        }
                        Err(err) => {
                            failure.get_or_insert(err);
                            f64::INFINITY
                        }
                    },
                    &[start.t.ln(), start.lambda],
                    &[log_step, 1.0 / (GRID_LAMBDAS - 1) as f64],
                    &bounds,
                    REFINE_TOLERANCE,
                    REFINE_MAX_EVALUATIONS,
                );
                (to_t(r.x[0]), r.x[1], r.evaluations, r.converged)
            }
            LambdaPolicy::Frozen(l) => {
                let bounds = Bounds {
                    lower: vec![T_MIN.ln()],
                    upper: vec![T_MAX.ln()],
                };
                let r = nelder_mead(
                    |x| match self.objective(to_t(x[0]), l) {
                        Ok(e) => {
                            trace.push(TraceEntry {
                                t: to_t(x[0]),
                                lambda: l,
                                objective: e.value,
                            });
                            e.value
                        }
                        Err(err) => {
                            failure.get_or_insert(err);
                            f64::INFINITY
                        }
                    },
                    &[start.t.ln()],
                    &[log_step],
                    &bounds,
                    REFINE_TOLERANCE,
                    REFINE_MAX_EVALUATIONS,
                );
                (to_t(r.x[0]), l, r.evaluations, r.converged)
            }
        };
        if let Some(err) = failure {
            return Err(err);
        }

        // The refinement starts at the grid optimum, so it never ends worse.
        let (t_star, lambda_star) = {
            let refined = self.objective(t_star, lambda_star)?.value;
            if refined <= start.objective {
                (t_star, lambda_star)
            } else {
                (start.t, start.lambda)
            }
        };
        let at_star = self.objective(t_star, lambda_star)?;

        let raw = WeightVector::raw(self.weights.clone())?;
        let transformed: Vec<f64> = self.weights.iter().map(|v| v.powf(lambda_star)).collect();
        let renyi = self
            .config
            .renyi_alphas
            .iter()
            .map(|&alpha| renyi_diagnostic(&raw, alpha).map(|value| RenyiValue { alpha, value }))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransCalSolution {
            t_star: Temperature::new(t_star)?,
            lambda_star,
            objective_value: at_star.value,
            mode: self.config.mode,
            trace,
            diagnostics: SolutionDiagnostics {
                max_weight_raw: raw.max_weight(),
                max_weight_transformed: transformed.iter().copied().fold(0.0, f64::max),
                mean_weight_raw: raw.mean(),
                mean_weight_transformed: mean(&transformed),
                renyi,
                reference_confidence: self.reference_confidence,
                eta1: at_star.eta1,
                eta2: at_star.eta2,
                degenerate_variate: at_star.degenerate,
                grid_evaluations,
                refine_evaluations,
                converged,
            },
        })
    }
}

/// Jointly minimizes the configured estimator over temperature and `lambda`.
pub fn optimize_transcal(
    logits: &Matrix,
    labels: &[usize],
    raw_weights: &WeightVector,
    config: TransCalConfig,
) -> Result<TransCalSolution> {
    TransCalProblem::new(logits, labels, raw_weights, config)?.optimize()
}
