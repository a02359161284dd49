//! Matrix and label files.
//!
//! Matrices are headerless CSV (one sample per row, values written with 17
//! significant digits so `f64` round-trips exactly) or raw little-endian
//! `f32` behind a 16-byte header: magic `TCAL`, `u32` rows, `u32` cols and
//! four reserved zero bytes. Labels are one integer per line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use transcal_core::Matrix;

use crate::error::CliError;

pub const RAW_MAGIC: &[u8; 4] = b"TCAL";
pub const RAW_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    Csv,
    #[value(name = "raw-f32")]
    RawF32,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::RawF32 => "f32",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(MatrixFormat::Csv),
            "f32" => Some(MatrixFormat::RawF32),
            _ => None,
        }
    }
}

fn io_error(path: &Path, err: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a matrix, choosing the format from the file extension.
pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    match MatrixFormat::from_path(path) {
        Some(MatrixFormat::RawF32) => read_raw_f32(path),
        _ => read_csv(path),
    }
}

pub fn write_matrix(path: &Path, m: &Matrix, format: MatrixFormat) -> Result<(), CliError> {
    let bytes = match format {
        MatrixFormat::Csv => csv_bytes(m),
        MatrixFormat::RawF32 => raw_f32_bytes(m)?,
    };
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// One value per line, as a single-column matrix.
pub fn write_vector(path: &Path, values: &[f64], format: MatrixFormat) -> Result<(), CliError> {
    let m = Matrix::new(values.len(), 1, values.to_vec()).expect("one column per value");
    write_matrix(path, &m, format)
}

/// Reads a single-column matrix as a vector.
pub fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let m = read_matrix(path)?;
    if m.cols() != 1 && m.rows() > 0 {
        return Err(CliError::Invalid(format!(
            "{} must have one column, found {}",
            path.display(),
            m.cols()
        )));
    }
    Ok(m.into_vec())
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = String::with_capacity(m.rows() * m.cols() * 24);
    for row in m.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_value(*v));
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn read_csv(path: &Path) -> Result<Matrix, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        if cols.is_some_and(|c| c != record.len()) {
            return Err(parse_error(
                path,
                i + 1,
                format!("expected {} values, found {}", cols.unwrap_or(0), record.len()),
            ));
        }
        cols = Some(record.len());
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(path, i + 1, format!("not a number: {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(Matrix::new(rows, cols.unwrap_or(0), data)?)
}

fn raw_f32_bytes(m: &Matrix) -> Result<Vec<u8>, CliError> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| CliError::Invalid(format!("matrix dimension {v} exceeds the raw-f32 limit")))
    };
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&dim(m.rows())?.to_le_bytes());
    out.extend_from_slice(&dim(m.cols())?.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for v in m.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_raw_f32(path: &Path) -> Result<Matrix, CliError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(parse_error(path, 0, "missing TCAL header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != rows * cols * 4 {
        return Err(parse_error(
            path,
            0,
            format!("header declares {rows}x{cols} values but body holds {} bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    Ok(Matrix::new(rows, cols, data)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_error(path, i + 1, format!("not a class index: {:?}", l.trim())))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<(), CliError> {
    let mut out = String::with_capacity(labels.len() * 2);
    for y in labels {
        out.push_str(&y.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), e.to_string()))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}
