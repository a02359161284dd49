use std::fs;
use std::path::Path;

use transcal_core::density_ratio::{lambda_transform, WeightVector};
use transcal_core::metrics::{BinningConfig, ProbabilitySet, ReliabilityBin};
use transcal_core::pipeline::{estimate_task_weights, fit_method, Method, MethodFit, MethodOptions, MetricBlock};
use transcal_core::synthshift::generate;
use transcal_core::transcal::{renyi_diagnostic, EstimatorMode, RenyiValue};

use crate::bench::{self, BenchConfig};
use crate::bundle::{self, Bundle, SynthConfig, SCHEMA_VERSION};
use crate::cli::{BenchArgs, CalibrateArgs, Cli, Command, DiagnoseArgs, EvaluateArgs, GenSynthArgs, WeightsArgs};
use crate::error::CliError;
use crate::io::{self, MatrixFormat};
use crate::report::*;

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const RELIABILITY_FILE: &str = "reliability.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const WEIGHTS_REPORT_FILE: &str = "weights_diagnostics.json";
pub const BENCH_FILE: &str = "bench.json";

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::Weights(a) => weights(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::Bench(a) => run_bench(&a),
    }
}

fn bins(b: u32) -> Result<BinningConfig, CliError> {
    Ok(BinningConfig::new(b as usize)?)
}

pub fn parse_alphas(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<f64>() {
            Ok(a) if a.is_finite() && a > 0.0 => Ok(a),
            _ => Err(CliError::Invalid(format!("alpha must be a positive number, got {t:?}"))),
        })
        .collect()
}

fn parse_methods(s: &str) -> Result<Vec<Method>, CliError> {
    if s.trim() == "all" {
        return Ok(Method::ALL.into_iter().filter(|m| *m != Method::Uncalibrated).collect());
    }
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let m = Method::parse(name).ok_or_else(|| CliError::Invalid(format!("unknown method {name:?}")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::Invalid("no method given".into()));
    }
    Ok(out)
}

pub fn gen_synth(a: &GenSynthArgs) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(p) => io::read_json::<SynthConfig>(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.scenario.seed = seed;
    }
    if let Some(norm) = a.shift_norm {
        let current = config.scenario.shift_norm();
        config.scenario.shift = if current > 0.0 {
            config.scenario.shift.iter().map(|v| v / current * norm).collect()
        } else {
            transcal_core::synthshift::shift_direction(config.scenario.dimension)
                .into_iter()
                .map(|v| v * norm)
                .collect()
        };
    }
    if let Some(s) = a.variance_scale {
        config.scenario.variance_scale = s;
    }
    if let Some(t) = a.temperature {
        config.scenario.distortion_temperature = t;
    }
    if let Some(n) = a.n_source {
        config.n_source = n;
    }
    if let Some(n) = a.n_target {
        config.n_target = n;
    }
    let task = generate(&config.scenario, config.n_source, config.n_target)?;
    bundle::write_generated(&a.out, &config, &task, a.format)?;
    Ok(())
}

pub fn weights(a: &WeightsArgs) -> Result<(), CliError> {
    let bundle = Bundle::load(&a.bundle)?;
    if !bundle.has_features() {
        return Err(CliError::Invalid(
            "weights need source train, source validation and target features".into(),
        ));
    }
    let estimate = estimate_task_weights(&bundle.task, a.seed, Default::default())?;
    io::ensure_dir(&a.out)?;
    let file = format!("weights.{}", a.format.extension());
    io::write_vector(&a.out.join(&file), estimate.weights.values(), a.format)?;
    let report = WeightsReport {
        schema_version: SCHEMA_VERSION,
        command: "weights".into(),
        seed: a.seed,
        weights_file: file,
        summary: WeightSummary::of(estimate.weights.values()),
        classifier: estimate.classifier,
    };
    io::write_json(&a.out.join(WEIGHTS_REPORT_FILE), &report)
}

fn load_weights(path: &Path, expected: usize) -> Result<WeightVector, CliError> {
    let values = io::read_vector(path)?;
    if values.len() != expected {
        return Err(CliError::Invalid(format!(
            "{} has {} weights but the source validation split has {expected} rows",
            path.display(),
            values.len()
        )));
    }
    Ok(WeightVector::raw(values)?)
}

fn bin_table(bins: &transcal_core::ReliabilityBins) -> Vec<ReliabilityBin> {
    bins.bins.clone()
}

fn method_report(
    fit: &MethodFit,
    bundle: &Bundle,
    bins: BinningConfig,
    alphas: &[f64],
    out: &Path,
) -> Result<MethodReport, CliError> {
    let task = &bundle.task;
    let source = fit.map.apply(&task.source_val_logits)?;
    let (source_val, source_bins) = MetricBlock::compute(&source, &task.source_val_labels, bins)?;
    let target_probs = fit.map.apply(&task.target_logits)?;
    let probabilities_file = format!("probs_{}.csv", fit.method.name());
    io::write_matrix(&out.join(&probabilities_file), target_probs.probs(), MatrixFormat::Csv)?;
    let (target, target_bins) = match &task.target_labels {
        Some(y) => {
            let (block, table) = MetricBlock::compute(&target_probs, y, bins)?;
            (Some(block), Some(bin_table(&table)))
        }
        None => (None, None),
    };

    let mut parameters = Parameters {
        temperature: fit.map.temperature().map(|t| t.value()),
        ..Parameters::default()
    };
    let mut diagnostics = MethodDiagnostics::default();
    if let Some(tf) = &fit.temperature_fit {
        diagnostics.degenerate = tf.degenerate;
    }
    if let Some(af) = &fit.affine_fit {
        parameters.affine = Some(af.params.clone());
        diagnostics.affine_iterations = Some(af.iterations);
        diagnostics.undersized = Some(af.undersized);
    }
    if let Some(w) = &fit.weights {
        diagnostics.max_weight_before_lambda = Some(w.max_weight());
        diagnostics.max_weight_after_lambda = Some(w.max_weight());
        diagnostics.renyi = alphas
            .iter()
            .map(|&alpha| renyi_diagnostic(w, alpha).map(|value| RenyiValue { alpha, value }))
            .collect::<Result<_, _>>()?;
    }
    if let Some(s) = &fit.transcal {
        parameters.lambda = Some(s.lambda_star);
        parameters.eta1 = s.diagnostics.eta1;
        parameters.eta2 = s.diagnostics.eta2;
        parameters.mode = Some(s.mode);
        diagnostics.max_weight_before_lambda = Some(s.diagnostics.max_weight_raw);
        diagnostics.max_weight_after_lambda = Some(s.diagnostics.max_weight_transformed);
        diagnostics.renyi = s.diagnostics.renyi.clone();
        diagnostics.skipped_variate = s.diagnostics.degenerate_variate;
        diagnostics.degenerate = s.t_star.value() <= transcal_core::scaling::T_MIN
            || s.t_star.value() >= transcal_core::scaling::T_MAX;
        diagnostics.optimizer = Some(OptimizerSummary {
            objective_value: s.objective_value,
            grid_evaluations: s.diagnostics.grid_evaluations,
            refine_evaluations: s.diagnostics.refine_evaluations,
            trace_length: s.trace.len(),
            converged: s.diagnostics.converged,
            reference_confidence: s.diagnostics.reference_confidence,
        });
    }
    Ok(MethodReport {
        method: fit.method.name().into(),
        probabilities_file,
        parameters,
        source_val,
        source_val_bins: bin_table(&source_bins),
        target,
        target_bins,
        diagnostics,
    })
}

pub fn calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let binning = bins(a.bins)?;
    let mode = EstimatorMode::parse(&a.mode).ok_or_else(|| CliError::Invalid(format!("unknown mode {:?}", a.mode)))?;
    let alphas = parse_alphas(&a.alphas)?;
    let methods = parse_methods(&a.method)?;
    let bundle = Bundle::load(&a.bundle)?;
    let task = &bundle.task;

    if methods.contains(&Method::Oracle) && task.target_labels.is_none() {
        return Err(CliError::Invalid("the oracle method requires target labels in the bundle".into()));
    }
    let needs_weights = methods.iter().any(|m| m.needs_weights());
    let (weights, weights_source) = match (&a.weights, needs_weights) {
        (Some(p), _) => (
            Some(load_weights(p, task.source_val_logits.rows())?),
            p.display().to_string(),
        ),
        (None, true) => {
            if !bundle.has_features() {
                return Err(CliError::Invalid(format!(
                    "{} needs features in the bundle or a --weights file",
                    methods.iter().find(|m| m.needs_weights()).expect("some method needs weights").name()
                )));
            }
            (
                Some(estimate_task_weights(task, a.seed, Default::default())?.weights),
                "estimated".to_string(),
            )
        }
        (None, false) => (None, "none".to_string()),
    };

    io::ensure_dir(&a.out)?;
    let options = MethodOptions {
        mode,
        bins: binning,
        renyi_alphas: alphas.clone(),
        weights: weights.clone(),
        seed: a.seed,
        ..MethodOptions::default()
    };
    let mut all = vec![Method::Uncalibrated];
    all.extend(methods.iter().copied().filter(|m| *m != Method::Uncalibrated));
    let mut reports = Vec::with_capacity(all.len());
    for m in all {
        let fit = fit_method(task, m, &options)?;
        reports.push(method_report(&fit, &bundle, binning, &alphas, &a.out)?);
    }
    let report = CalibrationReport {
        schema_version: SCHEMA_VERSION,
        command: "calibrate".into(),
        config: ConfigEcho {
            seed: a.seed,
            bins: binning.num_bins,
            mode,
            methods: methods.iter().map(|m| m.name().to_string()).collect(),
            alphas,
            weights: weights_source,
        },
        data: DataSummary {
            n_source_val: task.source_val_logits.rows(),
            n_target: task.target_logits.rows(),
            classes: task.num_classes(),
            target_labels: task.target_labels.is_some(),
        },
        weights: weights.as_ref().map(|w| WeightSummary::of(w.values())),
        methods: reports,
    };
    io::write_json(&a.out.join(REPORT_FILE), &report)
}

fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let opt = |v: Option<f64>| v.map(io::format_value).unwrap_or_default();
    let mut out = String::from("lower,upper,count,weight,accuracy,confidence\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            io::format_value(b.lower),
            io::format_value(b.upper),
            b.count,
            io::format_value(b.weight),
            opt(b.accuracy),
            opt(b.confidence)
        ));
    }
    out
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let binning = bins(a.bins)?;
    let probs = ProbabilitySet::new(io::read_matrix(&a.probabilities)?)?;
    let labels = io::read_labels(&a.labels)?;
    if labels.len() != probs.len() {
        return Err(CliError::Invalid(format!(
            "{} has {} rows but {} has {}",
            a.probabilities.display(),
            probs.len(),
            a.labels.display(),
            labels.len()
        )));
    }
    let (metrics, table) = MetricBlock::compute(&probs, &labels, binning)?;
    io::ensure_dir(&a.out)?;
    let report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        command: "evaluate".into(),
        bins: binning.num_bins,
        metrics,
        reliability: table.bins.clone(),
    };
    io::write_json(&a.out.join(METRICS_FILE), &report)?;
    let path = a.out.join(RELIABILITY_FILE);
    fs::write(&path, reliability_csv(&table.bins)).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<(), CliError> {
    let alphas = parse_alphas(&a.alphas)?;
    if a.bins == 0 {
        return Err(CliError::Invalid("--bins must be at least 1".into()));
    }
    let bundle = Bundle::load(&a.bundle)?;
    let n = bundle.task.source_val_logits.rows();
    let path = a
        .weights
        .clone()
        .ok_or_else(|| CliError::Invalid("diagnose needs a --weights file (see the weights command)".into()))?;
    let w = load_weights(&path, n)?;

    let renyi_of = |w: &WeightVector| -> Result<Vec<RenyiValue>, CliError> {
        alphas
            .iter()
            .map(|&alpha| Ok(RenyiValue {
                alpha,
                value: renyi_diagnostic(w, alpha)?,
            }))
            .collect()
    };
    let lambda_profile = (0..=10)
        .map(|i| {
            let lambda = i as f64 / 10.0;
            let t = lambda_transform(&w, lambda)?;
            Ok(LambdaPoint {
                lambda,
                max_weight: t.max_weight(),
                mean_weight: t.mean(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let true_weights = match (&bundle.true_weights, &bundle.manifest) {
        (Some(tw), Some(manifest)) => {
            let truth = WeightVector::raw(tw.clone())?;
            let floor = f64::MIN_POSITIVE;
            let log_err: Vec<f64> = w
                .values()
                .iter()
                .zip(tw)
                .map(|(e, t)| (e.max(floor).ln() - t.max(floor).ln()).abs())
                .collect();
            let sq: f64 = w.values().iter().zip(tw).map(|(e, t)| (e - t) * (e - t)).sum();
            Some(TrueWeightComparison {
                mean_abs_log_error: log_err.iter().sum::<f64>() / n as f64,
                rmse: (sq / n as f64).sqrt(),
                true_summary: WeightSummary::of(tw),
                true_renyi: alphas
                    .iter()
                    .map(|&alpha| manifest.scenario.true_renyi(alpha).ok().map(|value| RenyiValue { alpha, value }))
                    .collect(),
                empirical_true_renyi: renyi_of(&truth)?,
            })
        }
        _ => None,
    };

    let report = DiagnosticsReport {
        schema_version: SCHEMA_VERSION,
        command: "diagnose".into(),
        weights_file: path.display().to_string(),
        summary: WeightSummary::of(w.values()),
        histogram: Histogram::of(w.values(), a.bins as usize),
        renyi: renyi_of(&w)?,
        lambda_profile,
        true_weights,
    };
    io::ensure_dir(&a.out)?;
    io::write_json(&a.out.join(DIAGNOSTICS_FILE), &report)
}

pub fn run_bench(a: &BenchArgs) -> Result<(), CliError> {
    if a.seeds == 0 || a.resamples < 2 {
        return Err(CliError::Invalid("bench needs at least one seed and two resamples".into()));
    }
    let config = BenchConfig {
        seeds: (a.seed..a.seed + a.seeds).collect(),
        n_source: a.n_source,
        n_target: a.n_target,
        resamples: a.resamples,
        bins: bins(a.bins)?,
        ..BenchConfig::default()
    };
    let report = bench::run_grid(&config, |done, total| {
        eprint!("\rbench: {done}/{total} tasks");
        if done == total {
            eprintln!();
        }
    })?;

    println!(
        "{:>6} {:>5} {:>4} | {:>8} {:>8} {:>8} {:>8} {:>8} | {:>6} {:>6} {:>6} {:>5}",
        "shift", "var", "t", "uncal", "temp", "transcal", "no-bias", "oracle", "T_tc", "T_or", "T_ts", "lam"
    );
    for s in &report.scenarios {
        println!(
            "{:>6.2} {:>5.2} {:>4.1} | {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} | {:>6.3} {:>6.3} {:>6.3} {:>5.2}",
            s.scenario.shift_norm(),
            s.scenario.variance_scale,
            s.scenario.distortion_temperature,
            s.target_ece.uncalibrated,
            s.target_ece.temp,
            s.target_ece.transcal,
            s.target_ece.transcal_no_bias,
            s.target_ece.oracle,
            s.temperature.transcal,
            s.temperature.oracle,
            s.temperature.temp,
            s.lambda_star
        );
    }
    if let Some(out) = &a.out {
        io::ensure_dir(out)?;
        io::write_json(&out.join(BENCH_FILE), &report)?;
    }
    Ok(())
}
