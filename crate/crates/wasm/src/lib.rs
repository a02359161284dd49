//! Browser bindings. A [`Demo`] owns one synthetic task and its estimated
//! weights; every query returns a JSON string the page draws on a canvas.

use serde::Serialize;
use transcal_core::density_ratio::lambda_transform;
use transcal_core::metrics::ReliabilityBin;
use transcal_core::optimize::log_grid;
use transcal_core::pipeline::{estimate_task_weights, fit_method, CalibrationMap, WeightEstimate};
use transcal_core::scaling::{T_MAX, T_MIN};
use transcal_core::synthshift::generate;
use transcal_core::transcal::{renyi_diagnostic, TransCalConfig, TransCalProblem};
use transcal_core::{CalibrationTask, Method, MethodOptions, MetricBlock, ShiftScenario, WeightVector};
use wasm_bindgen::prelude::*;

const ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(js_err)
}

#[derive(Serialize)]
struct Side {
    metrics: MetricBlock,
    bins: Vec<ReliabilityBin>,
}

#[derive(Serialize)]
struct ReliabilityView {
    method: &'static str,
    temperature: Option<f64>,
    lambda: Option<f64>,
    before: Side,
    after: Side,
}

#[derive(Serialize)]
struct SurfaceView {
    temperatures: Vec<f64>,
    lambdas: Vec<f64>,
    /// Row-major, one row per temperature.
    values: Vec<f64>,
    t_star: f64,
    lambda_star: f64,
    t_true: f64,
}

#[derive(Serialize)]
struct RenyiPoint {
    alpha: f64,
    estimated: f64,
    exact: Option<f64>,
}

#[derive(Serialize)]
struct WeightView {
    lambda: f64,
    edges: Vec<f64>,
    counts: Vec<usize>,
    max_weight: f64,
    mean_weight: f64,
    renyi: Vec<RenyiPoint>,
}

#[wasm_bindgen]
pub struct Demo {
    scenario: ShiftScenario,
    task: CalibrationTask,
    weights: WeightVector,
}

#[wasm_bindgen]
impl Demo {
    /// Generates a task with the standard geometry and estimates its weights.
    #[wasm_bindgen(constructor)]
    pub fn new(shift_norm: f64, variance_scale: f64, t_true: f64, n: usize, seed: u32) -> Result<Demo, JsValue> {
        let seed = u64::from(seed);
        let scenario = ShiftScenario::standard(shift_norm, variance_scale, t_true, seed);
        let generated = generate(&scenario, n, n).map_err(js_err)?;
        let task = CalibrationTask::from_generated(&generated);
        let WeightEstimate { weights, .. } = estimate_task_weights(&task, seed, Default::default()).map_err(js_err)?;
        Ok(Demo { scenario, task, weights })
    }

    /// Target reliability diagrams before and after `method`.
    pub fn reliability(&self, method: &str) -> Result<String, JsValue> {
        let method = Method::parse(method).ok_or_else(|| js_err(format!("unknown method {method:?}")))?;
        let labels = self.task.target_labels.as_deref().expect("synthetic tasks carry target labels");
        let options = MethodOptions {
            weights: Some(self.weights.clone()),
            ..MethodOptions::default()
        };
        let side = |map: &CalibrationMap| -> Result<Side, JsValue> {
            let probs = map.apply(&self.task.target_logits).map_err(js_err)?;
            let (metrics, table) = MetricBlock::compute(&probs, labels, options.bins).map_err(js_err)?;
            Ok(Side {
                metrics,
                bins: table.bins,
            })
        };
        let fit = fit_method(&self.task, method, &options).map_err(js_err)?;
        to_json(&ReliabilityView {
            method: method.name(),
            temperature: fit.map.temperature().map(|t| t.value()),
            lambda: fit.transcal.as_ref().map(|s| s.lambda_star),
            before: side(&CalibrationMap::Identity)?,
            after: side(&fit.map)?,
        })
    }

    /// The estimated target calibration error over a `(T, lambda)` grid.
    pub fn surface(&self, temperatures: usize, lambdas: usize) -> Result<String, JsValue> {
        if temperatures < 2 || lambdas < 2 {
            return Err(js_err("surface needs at least two points per axis"));
        }
        let problem = TransCalProblem::new(
            &self.task.source_val_logits,
            &self.task.source_val_labels,
            &self.weights,
            TransCalConfig::default(),
        )
        .map_err(js_err)?;
        let ts = log_grid(T_MIN.max(0.25), T_MAX.min(10.0), temperatures);
        let ls: Vec<f64> = (0..lambdas).map(|j| j as f64 / (lambdas - 1) as f64).collect();
        let values = problem.surface(&ts, &ls).map_err(js_err)?.into_vec();
        let solution = problem.optimize().map_err(js_err)?;
        to_json(&SurfaceView {
            temperatures: ts,
            lambdas: ls,
            values,
            t_star: solution.t_star.value(),
            lambda_star: solution.lambda_star,
            t_true: self.scenario.distortion_temperature,
        })
    }

    /// Histogram of `w^lambda` with Rényi values against the closed form.
    pub fn weights(&self, lambda: f64, bins: usize) -> Result<String, JsValue> {
        if bins == 0 {
            return Err(js_err("histogram needs at least one bin"));
        }
        let w = lambda_transform(&self.weights, lambda).map_err(js_err)?;
        let values = w.values();
        let max = w.max_weight();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = if max > 0.0 { ((v / max * bins as f64) as usize).min(bins - 1) } else { 0 };
            counts[i] += 1;
        }
        let renyi = ALPHAS
            .iter()
            .map(|&alpha| {
                Ok(RenyiPoint {
                    alpha,
                    estimated: renyi_diagnostic(&w, alpha).map_err(js_err)?,
                    // The closed form describes the raw ratio only.
                    exact: (lambda == 1.0).then(|| self.scenario.true_renyi(alpha).ok()).flatten(),
                })
            })
            .collect::<Result<_, JsValue>>()?;
        to_json(&WeightView {
            lambda,
            edges: (0..=bins).map(|i| max * i as f64 / bins as f64).collect(),
            counts,
            max_weight: max,
            mean_weight: w.mean(),
            renyi,
        })
    }
}
