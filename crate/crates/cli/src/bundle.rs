//! On-disk task bundles: a directory of matrix files with fixed stems and an
//! optional `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transcal_core::pipeline::CalibrationTask;
use transcal_core::synthshift::{GeneratedTask, ShiftScenario};
use transcal_core::Matrix;

use crate::error::CliError;
use crate::io::{self, MatrixFormat};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub const SOURCE_TRAIN_FEATURES: &str = "source_train_features";
pub const SOURCE_VAL_FEATURES: &str = "source_val_features";
pub const SOURCE_VAL_LOGITS: &str = "source_val_logits";
pub const SOURCE_VAL_LABELS: &str = "source_val_labels";
pub const TARGET_FEATURES: &str = "target_features";
pub const TARGET_LOGITS: &str = "target_logits";
pub const TARGET_LABELS: &str = "target_labels";
pub const TRUE_WEIGHTS: &str = "true_weights";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub format: MatrixFormat,
    pub seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub scenario: ShiftScenario,
    pub t_true: f64,
    /// Exact `q/p` ratios on the source validation rows are all one.
    pub true_weights_all_one: bool,
    pub files: BTreeMap<String, FileEntry>,
}

/// Settings for a synthetic bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scenario: ShiftScenario,
    pub n_source: usize,
    pub n_target: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenario: ShiftScenario::standard(1.0, 1.0, 2.0, 0),
            n_source: 10_000,
            n_target: 10_000,
        }
    }
}

/// Writes every split of a generated task plus the manifest.
pub fn write_generated(dir: &Path, config: &SynthConfig, task: &GeneratedTask, format: MatrixFormat) -> Result<Manifest, CliError> {
    io::ensure_dir(dir)?;
    let mut files = BTreeMap::new();
    let mut put = |stem: &str, m: &Matrix| -> Result<(), CliError> {
        let file = format!("{stem}.{}", format.extension());
        io::write_matrix(&dir.join(&file), m, format)?;
        files.insert(
            stem.to_string(),
            FileEntry {
                file,
                rows: m.rows(),
                cols: m.cols(),
            },
        );
        Ok(())
    };
    put(SOURCE_TRAIN_FEATURES, &task.source_train.features)?;
    put(SOURCE_VAL_FEATURES, &task.source_val.features)?;
    put(SOURCE_VAL_LOGITS, &task.source_val.logits)?;
    put(TARGET_FEATURES, &task.target.features)?;
    put(TARGET_LOGITS, &task.target.logits)?;
    let weights = Matrix::new(task.true_weights.len(), 1, task.true_weights.clone())?;
    put(TRUE_WEIGHTS, &weights)?;

    let mut labels = |stem: &str, y: &[usize]| -> Result<(), CliError> {
        let file = format!("{stem}.csv");
        io::write_labels(&dir.join(&file), y)?;
        files.insert(
            stem.to_string(),
            FileEntry {
                file,
                rows: y.len(),
                cols: 1,
            },
        );
        Ok(())
    };
    labels(SOURCE_VAL_LABELS, &task.source_val.labels)?;
    labels(TARGET_LABELS, task.target.labels.reveal())?;

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        format,
        seed: task.scenario.seed,
        n_source: config.n_source,
        n_target: config.n_target,
        scenario: task.scenario.clone(),
        t_true: task.scenario.distortion_temperature,
        true_weights_all_one: task.true_weights.iter().all(|&w| w == 1.0),
        files,
    };
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A bundle loaded from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub task: CalibrationTask,
    pub manifest: Option<Manifest>,
    pub true_weights: Option<Vec<f64>>,
    paths: BTreeMap<&'static str, PathBuf>,
}

fn locate(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["csv", "f32"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::Invalid(format!("bundle directory {} does not exist", dir.display())));
        }
        let mut paths = BTreeMap::new();
        let mut matrix = |stem: &'static str| -> Result<Option<Matrix>, CliError> {
            match locate(dir, stem) {
                Some(p) => {
                    let m = io::read_matrix(&p)?;
                    paths.insert(stem, p);
                    Ok(Some(m))
                }
                None => Ok(None),
            }
        };
        let source_train_features = matrix(SOURCE_TRAIN_FEATURES)?;
        let source_val_features = matrix(SOURCE_VAL_FEATURES)?;
        let source_val_logits = matrix(SOURCE_VAL_LOGITS)?;
        let target_features = matrix(TARGET_FEATURES)?;
        let target_logits = matrix(TARGET_LOGITS)?;
        let true_weights = matrix(TRUE_WEIGHTS)?;

        let required = |stem: &str, m: Option<Matrix>| {
            m.ok_or_else(|| CliError::Invalid(format!("bundle {} has no {stem} file", dir.display())))
        };
        let source_val_logits = required(SOURCE_VAL_LOGITS, source_val_logits)?;
        let target_logits = required(TARGET_LOGITS, target_logits)?;

        let label_path = dir.join(format!("{SOURCE_VAL_LABELS}.csv"));
        if !label_path.is_file() {
            return Err(CliError::Invalid(format!(
                "bundle {} has no {SOURCE_VAL_LABELS}.csv file",
                dir.display()
            )));
        }
        let source_val_labels = io::read_labels(&label_path)?;
        paths.insert(SOURCE_VAL_LABELS, label_path);
        let target_label_path = dir.join(format!("{TARGET_LABELS}.csv"));
        let target_labels = if target_label_path.is_file() {
            let y = io::read_labels(&target_label_path)?;
            paths.insert(TARGET_LABELS, target_label_path);
            Some(y)
        } else {
            None
        };
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.is_file() {
            Some(io::read_json::<Manifest>(&manifest_path)?)
        } else {
            None
        };

        let bundle = Self {
            dir: dir.to_path_buf(),
            task: CalibrationTask {
                source_train_features,
                source_val_features,
                source_val_logits,
                source_val_labels,
                target_features,
                target_logits,
                target_labels,
            },
            manifest,
            true_weights: true_weights.map(Matrix::into_vec),
            paths,
        };
        bundle.check_shapes()?;
        bundle.task.validate()?;
        Ok(bundle)
    }

    fn name(&self, stem: &str) -> String {
        self.paths
            .get(stem)
            .map_or_else(|| stem.to_string(), |p| p.display().to_string())
    }

    /// Shape checks that name the offending files.
    fn check_shapes(&self) -> Result<(), CliError> {
        let t = &self.task;
        let rows = |stem: &str, got: usize, ref_stem: &str, expected: usize| {
            if got != expected {
                return Err(CliError::Invalid(format!(
                    "{} has {got} rows but {} has {expected}",
                    self.name(stem),
                    self.name(ref_stem)
                )));
            }
            Ok(())
        };
        let n_val = t.source_val_logits.rows();
        rows(SOURCE_VAL_LABELS, t.source_val_labels.len(), SOURCE_VAL_LOGITS, n_val)?;
        if let Some(m) = &t.source_val_features {
            rows(SOURCE_VAL_FEATURES, m.rows(), SOURCE_VAL_LOGITS, n_val)?;
        }
        if let Some(w) = &self.true_weights {
            rows(TRUE_WEIGHTS, w.len(), SOURCE_VAL_LOGITS, n_val)?;
        }
        let n_target = t.target_logits.rows();
        if let Some(m) = &t.target_features {
            rows(TARGET_FEATURES, m.rows(), TARGET_LOGITS, n_target)?;
        }
        if let Some(y) = &t.target_labels {
            rows(TARGET_LABELS, y.len(), TARGET_LOGITS, n_target)?;
        }
        if t.target_logits.cols() != t.source_val_logits.cols() {
            return Err(CliError::Invalid(format!(
                "{} has {} classes but {} has {}",
                self.name(TARGET_LOGITS),
                t.target_logits.cols(),
                self.name(SOURCE_VAL_LOGITS),
                t.source_val_logits.cols()
            )));
        }
        let features: Vec<(&str, &Matrix)> = [
            (SOURCE_TRAIN_FEATURES, &t.source_train_features),
            (SOURCE_VAL_FEATURES, &t.source_val_features),
            (TARGET_FEATURES, &t.target_features),
        ]
        .into_iter()
        .filter_map(|(s, m)| m.as_ref().map(|m| (s, m)))
        .collect();
        if let Some(&(first_stem, first)) = features.first() {
            for &(stem, m) in &features[1..] {
                if m.cols() != first.cols() {
                    return Err(CliError::Invalid(format!(
                        "{} has dimension {} but {} has dimension {}",
                        self.name(stem),
                        m.cols(),
                        self.name(first_stem),
                        first.cols()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn has_features(&self) -> bool {
        self.task.source_train_features.is_some()
            && self.task.source_val_features.is_some()
            && self.task.target_features.is_some()
    }
}
