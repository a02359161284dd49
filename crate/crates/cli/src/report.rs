//! JSON report schemas. Field order is serialization order; nothing here
//! depends on wall-clock time, so reruns are byte-identical.

use serde::{Deserialize, Serialize};
use transcal_core::metrics::ReliabilityBin;
use transcal_core::pipeline::MetricBlock;
use transcal_core::scaling::AffineScaleParam;
use transcal_core::transcal::{EstimatorMode, RenyiValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl WeightSummary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            n: values.len(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub seed: u64,
    pub bins: usize,
    pub mode: EstimatorMode,
    pub methods: Vec<String>,
    pub alphas: Vec<f64>,
    /// `estimated`, `none`, or the weights file path.
    pub weights: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_source_val: usize,
    pub n_target: usize,
    pub classes: usize,
    pub target_labels: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub temperature: Option<f64>,
    pub lambda: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub mode: Option<EstimatorMode>,
    pub affine: Option<AffineScaleParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub objective_value: f64,
    pub grid_evaluations: usize,
    pub refine_evaluations: usize,
    pub trace_length: usize,
    pub converged: bool,
    pub reference_confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodDiagnostics {
    pub max_weight_before_lambda: Option<f64>,
    pub max_weight_after_lambda: Option<f64>,
    pub renyi: Vec<RenyiValue>,
    pub optimizer: Option<OptimizerSummary>,
    /// Optimum on a search bound or degenerate input.
    pub degenerate: bool,
    /// A control variate had no variance and was dropped (expected at lambda 0).
    pub skipped_variate: bool,
    pub affine_iterations: Option<usize>,
    pub undersized: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub probabilities_file: String,
    pub parameters: Parameters,
    pub source_val: MetricBlock,
    pub source_val_bins: Vec<ReliabilityBin>,
    pub target: Option<MetricBlock>,
    pub target_bins: Option<Vec<ReliabilityBin>>,
    pub diagnostics: MethodDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub command: String,
    pub config: ConfigEcho,
    pub data: DataSummary,
    pub weights: Option<WeightSummary>,
    pub methods: Vec<MethodReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub command: String,
    pub bins: usize,
    pub metrics: MetricBlock,
    pub reliability: Vec<ReliabilityBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges from 0 to the largest weight.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[0, max]`; the last bin is closed.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let max = values.iter().copied().fold(0.0, f64::max);
        let mut edges: Vec<f64> = (0..=bins).map(|i| max * i as f64 / bins as f64).collect();
        edges[bins] = max;
        let mut counts = vec![0; bins];
        for &v in values {
            let i = if max > 0.0 {
                ((v / max * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub max_weight: f64,
    pub mean_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueWeightComparison {
    pub mean_abs_log_error: f64,
    pub rmse: f64,
    pub true_summary: WeightSummary,
    /// Closed-form values; `None` where the integral diverges.
    pub true_renyi: Vec<Option<RenyiValue>>,
    pub empirical_true_renyi: Vec<RenyiValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub command: String,
    pub weights_file: String,
    pub summary: WeightSummary,
    pub histogram: Histogram,
    pub renyi: Vec<RenyiValue>,
    pub lambda_profile: Vec<LambdaPoint>,
    pub true_weights: Option<TrueWeightComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub weights_file: String,
    pub summary: WeightSummary,
    pub classifier: transcal_core::density_ratio::DomainClassifier,
}
