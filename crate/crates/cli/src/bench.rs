//! The synthetic benchmark grid: every scenario and seed is generated, every
//! calibrator fitted, and target-side outcomes recorded against ground truth.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use transcal_core::density_ratio::WeightVector;
use transcal_core::metrics::{self, BinningConfig};
use transcal_core::pipeline::{
    estimate_task_weights, fit_method, CalibrationMap, CalibrationTask, Method, MethodFit, MethodOptions,
};
use transcal_core::synthshift::{generate, ShiftScenario};
use transcal_core::transcal::{iwece_objective, CoefficientPolicy, EstimatorMode, TransCalConfig, TransCalProblem};
use transcal_core::{Result, Temperature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenarios: Vec<ShiftScenario>,
    pub seeds: Vec<u64>,
    pub n_source: usize,
    pub n_target: usize,
    pub resamples: usize,
    pub bins: BinningConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scenarios: ShiftScenario::default_grid(0),
            seeds: (0..10).collect(),
            n_source: 10_000,
            n_target: 10_000,
            resamples: 200,
            bins: BinningConfig::default(),
        }
    }
}

/// Target ECE (or temperature) per method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerMethod {
    pub uncalibrated: f64,
    pub temp: f64,
    pub cpcs: f64,
    pub transcal: f64,
    pub transcal_no_bias: f64,
    pub transcal_no_variance: f64,
    pub oracle: f64,
}

impl PerMethod {
    const METHODS: [Method; 7] = [
        Method::Uncalibrated,
        Method::Temp,
        Method::Cpcs,
        Method::Transcal,
        Method::TranscalNoBias,
        Method::TranscalNoVariance,
        Method::Oracle,
    ];

    fn slot(&mut self, m: Method) -> &mut f64 {
        match m {
            Method::Uncalibrated => &mut self.uncalibrated,
            Method::Temp => &mut self.temp,
            Method::Cpcs => &mut self.cpcs,
            Method::Transcal => &mut self.transcal,
            Method::TranscalNoBias => &mut self.transcal_no_bias,
            Method::TranscalNoVariance => &mut self.transcal_no_variance,
            Method::Oracle => &mut self.oracle,
            Method::Vector | Method::Matrix => unreachable!("not a benchmark method"),
        }
    }

    pub fn get(&self, m: Method) -> f64 {
        let mut copy = *self;
        *copy.slot(m)
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for m in Self::METHODS {
            *self.slot(m) += s * other.get(m);
        }
    }
}

/// Bootstrap standard deviations of the estimated target calibration error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub plain: f64,
    pub single: f64,
    pub serial: f64,
}

impl Spread {
    fn add_scaled(&mut self, o: &Self, s: f64) {
        self.plain += s * o.plain;
        self.single += s * o.single;
        self.serial += s * o.serial;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub scenario_index: usize,
    pub seed: u64,
    pub target_ece: PerMethod,
    pub temperature: PerMethod,
    pub lambda_star: f64,
    pub max_weight_raw: f64,
    pub max_weight_transformed: f64,
    /// Every temperature-family method kept all target predictions.
    pub predictions_preserved: bool,
    /// Mean source residual under exact weights, over all source rows.
    pub weighted_source_residual: f64,
    pub target_residual: f64,
    /// Coefficients held at their full-sample values.
    pub bootstrap_fixed: Spread,
    /// Coefficients refit on every resample.
    pub bootstrap_refit: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: ShiftScenario,
    pub shifted: bool,
    pub seeds: usize,
    pub target_ece: PerMethod,
    pub temperature: PerMethod,
    pub lambda_star: f64,
    pub abs_importance_error: f64,
    pub bootstrap_fixed: Spread,
    pub bootstrap_refit: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: BenchConfig,
    pub scenarios: Vec<ScenarioSummary>,
    pub tasks: Vec<TaskOutcome>,
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Wall-clock time spent in each stage of a task.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    /// Generation, weight estimation, every fit and the importance check.
    pub fits: Duration,
    pub bootstrap: Duration,
}

/// Runs one scenario at one seed.
pub fn run_task(config: &BenchConfig, scenario_index: usize, seed: u64) -> Result<TaskOutcome> {
    run_task_timed(config, scenario_index, seed).map(|(outcome, _)| outcome)
}

pub fn run_task_timed(config: &BenchConfig, scenario_index: usize, seed: u64) -> Result<(TaskOutcome, StageTimes)> {
    let start = Instant::now();
    let scenario = config.scenarios[scenario_index].with_seed(seed);
    let generated = generate(&scenario, config.n_source, config.n_target)?;
    let task = CalibrationTask::from_generated(&generated);
    let target_labels = generated.target.labels.reveal();

    let weights = estimate_task_weights(&task, seed, Default::default())?.weights;
    let options = MethodOptions {
        bins: config.bins,
        weights: Some(weights.clone()),
        seed,
        ..MethodOptions::default()
    };

    let before = CalibrationMap::Identity.apply(&task.target_logits)?;
    let mut target_ece = PerMethod::default();
    let mut temperature = PerMethod::default();
    let mut predictions_preserved = true;
    let mut transcal_fit: Option<MethodFit> = None;
    for m in PerMethod::METHODS {
        let fit = fit_method(&task, m, &options)?;
        let probs = fit.map.apply(&task.target_logits)?;
        predictions_preserved &= probs.predictions() == before.predictions();
        *target_ece.slot(m) = metrics::ece(&probs, target_labels, config.bins)?.ece;
        *temperature.slot(m) = fit.map.temperature().map_or(f64::NAN, Temperature::value);
        if m == Method::Transcal {
            transcal_fit = Some(fit);
        }
    }
    let solution = transcal_fit.and_then(|f| f.transcal).expect("transcal was fitted");

    // Importance-sampling check with exact weights at the raw temperature.
    let (source_x, source_logits, source_labels) = generated.all_source();
    let exact = WeightVector::raw(source_x.iter_rows().map(|x| scenario.true_weight(x)).collect())?;
    let weighted_source_residual = iwece_objective(&source_logits, &source_labels, &exact, Temperature::IDENTITY)?;
    let target_residual = iwece_objective(
        &task.target_logits,
        target_labels,
        &WeightVector::ones(target_labels.len()),
        Temperature::IDENTITY,
    )?;

    let problem = TransCalProblem::new(
        &task.source_val_logits,
        &task.source_val_labels,
        &weights,
        TransCalConfig {
            bins: config.bins,
            ..TransCalConfig::default()
        },
    )?;
    let fits = start.elapsed();
    let start = Instant::now();
    let spread = |policy| -> Result<Spread> {
        let sd = |mode| {
            problem
                .bootstrap(temperature.temp, 1.0, mode, policy, config.resamples, seed)
                .map(|v| sample_sd(&v))
        };
        Ok(Spread {
            plain: sd(EstimatorMode::PlainIwece)?,
            single: sd(EstimatorMode::CvWeightsOnly)?,
            serial: sd(EstimatorMode::CvSerial)?,
        })
    };

    let bootstrap_fixed = spread(CoefficientPolicy::Fixed)?;
    let bootstrap_refit = spread(CoefficientPolicy::Refit)?;
    let outcome = TaskOutcome {
        scenario_index,
        seed,
        target_ece,
        temperature,
        lambda_star: solution.lambda_star,
        max_weight_raw: solution.diagnostics.max_weight_raw,
        max_weight_transformed: solution.diagnostics.max_weight_transformed,
        predictions_preserved,
        weighted_source_residual,
        target_residual,
        bootstrap_fixed,
        bootstrap_refit,
    };
    let times = StageTimes {
        fits,
        bootstrap: start.elapsed(),
    };
    Ok((outcome, times))
}

/// Runs every scenario and seed; `progress` sees `(done, total)`.
pub fn run_grid(config: &BenchConfig, mut progress: impl FnMut(usize, usize)) -> Result<BenchReport> {
    let total = config.scenarios.len() * config.seeds.len();
    let mut tasks = Vec::with_capacity(total);
    for i in 0..config.scenarios.len() {
        for &seed in &config.seeds {
            tasks.push(run_task(config, i, seed)?);
            progress(tasks.len(), total);
        }
    }
    Ok(BenchReport {
        schema_version: crate::bundle::SCHEMA_VERSION,
        config: config.clone(),
        scenarios: summarize(config, &tasks),
        tasks,
    })
}

/// Per-scenario means over seeds.
pub fn summarize(config: &BenchConfig, tasks: &[TaskOutcome]) -> Vec<ScenarioSummary> {
    config
        .scenarios
        .iter()
        .enumerate()
        .map(|(i, scenario)| {
            let runs: Vec<&TaskOutcome> = tasks.iter().filter(|t| t.scenario_index == i).collect();
            let s = 1.0 / runs.len().max(1) as f64;
            let mut summary = ScenarioSummary {
                scenario: scenario.clone(),
                shifted: scenario.is_shifted(),
                seeds: runs.len(),
                target_ece: PerMethod::default(),
                temperature: PerMethod::default(),
                lambda_star: 0.0,
                abs_importance_error: 0.0,
                bootstrap_fixed: Spread::default(),
                bootstrap_refit: Spread::default(),
            };
            for r in runs {
                summary.target_ece.add_scaled(&r.target_ece, s);
                summary.temperature.add_scaled(&r.temperature, s);
                summary.lambda_star += s * r.lambda_star;
                summary.abs_importance_error += s * (r.weighted_source_residual - r.target_residual).abs();
                summary.bootstrap_fixed.add_scaled(&r.bootstrap_fixed, s);
                summary.bootstrap_refit.add_scaled(&r.bootstrap_refit, s);
            }
            summary
        })
        .collect()
}
