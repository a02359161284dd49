//! End-to-end calibration over an in-memory task: weight estimation, method
//! fitting and metric summaries.

use serde::{Deserialize, Serialize};

use crate::density_ratio::{
    estimate_weights, train_domain_classifier, upsample_balance, ClassifierConfig, DomainClassifier, DomainTag,
    FeatureSet, WeightVector,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{self, BinningConfig, ProbabilitySet, ReliabilityBins};
use crate::scaling::{self, AffineFit, AffineScaleParam, Temperature, TemperatureFit};
use crate::synthshift::GeneratedTask;
use crate::transcal::{optimize_transcal, EstimatorMode, TransCalConfig, TransCalSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Uncalibrated,
    Temp,
    Vector,
    Matrix,
    Cpcs,
    Transcal,
    TranscalNoBias,
    TranscalNoVariance,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Uncalibrated,
        Method::Temp,
        Method::Vector,
        Method::Matrix,
        Method::Cpcs,
        Method::Transcal,
        Method::TranscalNoBias,
        Method::TranscalNoVariance,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Uncalibrated => "uncalibrated",
            Method::Temp => "temp",
            Method::Vector => "vector",
            Method::Matrix => "matrix",
            Method::Cpcs => "cpcs",
            Method::Transcal => "transcal",
            Method::TranscalNoBias => "transcal-no-bias",
            Method::TranscalNoVariance => "transcal-no-variance",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Methods that divide logits by one positive scalar.
    pub fn is_temperature_family(self) -> bool {
        !matches!(self, Method::Vector | Method::Matrix)
    }

    pub fn needs_weights(self) -> bool {
        matches!(
            self,
            Method::Cpcs | Method::Transcal | Method::TranscalNoBias | Method::TranscalNoVariance
        )
    }
}

/// Calibration inputs. Target labels are for evaluation and the oracle only.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTask {
    pub source_train_features: Option<Matrix>,
    pub source_val_features: Option<Matrix>,
    pub source_val_logits: Matrix,
    pub source_val_labels: Vec<usize>,
    pub target_features: Option<Matrix>,
    pub target_logits: Matrix,
    pub target_labels: Option<Vec<usize>>,
}

fn expect_rows(what: &'static str, m: &Matrix, rows: usize) -> Result<()> {
    if m.rows() != rows {
        return Err(Error::LengthMismatch {
            what,
            expected: rows,
            got: m.rows(),
        });
    }
    Ok(())
}

fn expect_cols(what: &'static str, m: &Matrix, cols: usize) -> Result<()> {
    if m.cols() != cols {
        return Err(Error::LengthMismatch {
            what,
            expected: cols,
            got: m.cols(),
        });
    }
    Ok(())
}

impl CalibrationTask {
    pub fn from_generated(task: &GeneratedTask) -> Self {
        Self {
            source_train_features: Some(task.source_train.features.clone()),
            source_val_features: Some(task.source_val.features.clone()),
            source_val_logits: task.source_val.logits.clone(),
            source_val_labels: task.source_val.labels.clone(),
            target_features: Some(task.target.features.clone()),
            target_logits: task.target.logits.clone(),
            target_labels: Some(task.target.labels.reveal().to_vec()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.source_val_logits.cols()
    }

    /// Checks row counts within splits and widths across splits.
    pub fn validate(&self) -> Result<()> {
        let n_val = self.source_val_logits.rows();
        let k = self.num_classes();
        if n_val == 0 {
            return Err(Error::Empty("source validation logits"));
        }
        if self.target_logits.rows() == 0 {
            return Err(Error::Empty("target logits"));
        }
        expect_cols("target logit columns", &self.target_logits, k)?;
        if self.source_val_labels.len() != n_val {
            return Err(Error::LengthMismatch {
                what: "source validation labels",
                expected: n_val,
                got: self.source_val_labels.len(),
            });
        }
        metrics::check_labels(&self.source_val_labels, n_val, k)?;
        if let Some(y) = &self.target_labels {
            if y.len() != self.target_logits.rows() {
                return Err(Error::LengthMismatch {
                    what: "target labels",
                    expected: self.target_logits.rows(),
                    got: y.len(),
                });
            }
            metrics::check_labels(y, y.len(), k)?;
        }
        if let Some(v) = &self.source_val_features {
            expect_rows("source validation feature rows", v, n_val)?;
        }
        if let Some(t) = &self.target_features {
            expect_rows("target feature rows", t, self.target_logits.rows())?;
        }
        let dims: Vec<(&'static str, &Matrix)> = [
            ("source train feature columns", &self.source_train_features),
            ("source validation feature columns", &self.source_val_features),
            ("target feature columns", &self.target_features),
        ]
        .into_iter()
        .filter_map(|(w, m)| m.as_ref().map(|m| (w, m)))
        .collect();
        if let Some((_, first)) = dims.first() {
            for (what, m) in &dims[1..] {
                expect_cols(what, m, first.cols())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    pub weights: WeightVector,
    pub classifier: DomainClassifier,
}

/// Trains the domain classifier on upsampled source-train and target
/// features and evaluates raw weights on the source validation features.
pub fn estimate_task_weights(task: &CalibrationTask, seed: u64, config: ClassifierConfig) -> Result<WeightEstimate> {
    let missing = |what: &str| Error::InvalidParameter(format!("{what} are required for weight estimation"));
    let train = task
        .source_train_features
        .as_ref()
        .ok_or_else(|| missing("source train features"))?;
    let val = task
        .source_val_features
        .as_ref()
        .ok_or_else(|| missing("source validation features"))?;
    let target = task.target_features.as_ref().ok_or_else(|| missing("target features"))?;
    let source = FeatureSet::new(train.clone(), DomainTag::SourceTrain)?;
    let target = FeatureSet::new(target.clone(), DomainTag::Target)?;
    let val = FeatureSet::new(val.clone(), DomainTag::SourceVal)?;
    let (source, target) = upsample_balance(&source, &target, seed)?;
    let classifier = train_domain_classifier(&source, &target, config)?;
    let weights = estimate_weights(&classifier, &val)?;
    Ok(WeightEstimate { weights, classifier })
}

/// A fitted map from logits to probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationMap {
    Identity,
    Temperature { temperature: Temperature },
    Affine { params: AffineScaleParam },
}

impl CalibrationMap {
    pub fn apply(&self, logits: &Matrix) -> Result<ProbabilitySet> {
        match self {
            CalibrationMap::Identity => scaling::softmax_with_temperature(logits, Temperature::IDENTITY),
            CalibrationMap::Temperature { temperature } => scaling::softmax_with_temperature(logits, *temperature),
            CalibrationMap::Affine { params } => params.calibrate(logits),
        }
    }

    pub fn temperature(&self) -> Option<Temperature> {
        match self {
            CalibrationMap::Identity => Some(Temperature::IDENTITY),
            CalibrationMap::Temperature { temperature } => Some(*temperature),
            CalibrationMap::Affine { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOptions {
    pub mode: EstimatorMode,
    pub bins: BinningConfig,
    pub renyi_alphas: Vec<f64>,
    /// Raw source-validation weights; estimated from features when absent.
    pub weights: Option<WeightVector>,
    pub seed: u64,
    pub classifier: ClassifierConfig,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::default(),
            bins: BinningConfig::default(),
            renyi_alphas: vec![1.0],
            weights: None,
            seed: 0,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodFit {
    pub method: Method,
    pub map: CalibrationMap,
    pub temperature_fit: Option<TemperatureFit>,
    pub affine_fit: Option<AffineFit>,
    pub transcal: Option<TransCalSolution>,
    /// Weights used by the fit, when any.
    pub weights: Option<WeightVector>,
}

impl MethodFit {
    fn plain(method: Method, map: CalibrationMap) -> Self {
        Self {
            method,
            map,
            temperature_fit: None,
            affine_fit: None,
            transcal: None,
            weights: None,
        }
    }
}

/// Fits one method on the task's source data (or target labels for the
/// oracle).
pub fn fit_method(task: &CalibrationTask, method: Method, options: &MethodOptions) -> Result<MethodFit> {
    task.validate()?;
    let logits = &task.source_val_logits;
    let labels = &task.source_val_labels;
    let weights = || -> Result<WeightVector> {
        match &options.weights {
            Some(w) => {
                if w.len() != logits.rows() {
                    return Err(Error::LengthMismatch {
                        what: "weights",
                        expected: logits.rows(),
                        got: w.len(),
                    });
                }
                Ok(w.clone())
            }
            None => Ok(estimate_task_weights(task, options.seed, options.classifier)?.weights),
        }
    };
    let temperature = |fit: TemperatureFit| CalibrationMap::Temperature {
        temperature: fit.temperature,
    };

    Ok(match method {
        Method::Uncalibrated => MethodFit::plain(method, CalibrationMap::Identity),
        Method::Temp => {
            let fit = scaling::fit_temperature_nll(logits, labels)?;
            MethodFit {
                temperature_fit: Some(fit),
                ..MethodFit::plain(method, temperature(fit))
            }
        }
        Method::Oracle => {
            let y = task.target_labels.as_ref().ok_or_else(|| {
                Error::InvalidParameter("the oracle method requires target labels".into())
            })?;
            let fit = scaling::fit_oracle_temperature(&task.target_logits, y)?;
            MethodFit {
                temperature_fit: Some(fit),
                ..MethodFit::plain(method, temperature(fit))
            }
        }
        Method::Vector | Method::Matrix => {
            let fit = if method == Method::Vector {
                scaling::fit_vector_scaling(logits, labels)?
            } else {
                scaling::fit_matrix_scaling(logits, labels)?
            };
            MethodFit {
                affine_fit: Some(fit.clone()),
                ..MethodFit::plain(method, CalibrationMap::Affine { params: fit.params })
            }
        }
        Method::Cpcs => {
            let w = weights()?;
            let fit = scaling::fit_cpcs_temperature(logits, labels, w.values())?;
            MethodFit {
                temperature_fit: Some(fit),
                weights: Some(w),
                ..MethodFit::plain(method, temperature(fit))
            }
        }
        Method::Transcal | Method::TranscalNoBias | Method::TranscalNoVariance => {
            let w = weights()?;
            let mode = if method == Method::TranscalNoVariance {
                EstimatorMode::PlainIwece
            } else {
                options.mode
            };
            let mut config = TransCalConfig {
                mode,
                bins: options.bins,
                renyi_alphas: options.renyi_alphas.clone(),
                ..TransCalConfig::default()
            };
            if method == Method::TranscalNoBias {
                config = config.without_bias();
            }
            let solution = optimize_transcal(logits, labels, &w, config)?;
            MethodFit {
                transcal: Some(solution.clone()),
                weights: Some(w),
                ..MethodFit::plain(
                    method,
                    CalibrationMap::Temperature {
                        temperature: solution.t_star,
                    },
                )
            }
        }
    })
}

/// Headline metrics for one labeled prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub ece: f64,
    pub nll: f64,
    pub nll_mean: f64,
    pub brier: f64,
    pub accuracy: f64,
    pub n: usize,
}

impl MetricBlock {
    pub fn compute(probs: &ProbabilitySet, labels: &[usize], bins: BinningConfig) -> Result<(Self, ReliabilityBins)> {
        let table = metrics::ece(probs, labels, bins)?;
        let block = Self {
            ece: table.ece,
            nll: metrics::nll(probs, labels)?,
            nll_mean: metrics::nll_mean(probs, labels)?,
            brier: metrics::brier(probs, labels)?,
            accuracy: metrics::accuracy(probs, labels)?,
            n: labels.len(),
        };
        Ok((block, table))
    }
}
