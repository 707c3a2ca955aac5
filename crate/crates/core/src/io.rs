//! CSV and JSON persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::patterns::{PatternCurve, PatternKind};
use crate::synth::{CoincidenceScan, SynthError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Content { path: PathBuf, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
    move |source| IoError::Json {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    position_mm: f64,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct ScanRow {
    position_mm: f64,
    counts: u64,
    duration_s: f64,
}

/// Writes `(position_mm, value)` rows.
pub fn write_curve(curve: &PatternCurve, path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for (x, &v) in curve.positions().zip(curve.values()) {
        w.serialize(CurveRow { position_mm: x, value: v }).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Reads `(position_mm, value)` rows.
pub fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize::<CurveRow>()
        .map(|row| row.map(|r| (r.position_mm, r.value)).map_err(csv_err(path)))
        .collect()
}

/// Sidecar path `<scan>.json` next to `<scan>.csv`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    arm: PatternKind,
    seed: u64,
    meta: Map<String, Value>,
}

/// Writes the scan CSV and its JSON sidecar.
pub fn write_scan(scan: &CoincidenceScan, path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for (&x, &n) in scan.positions().iter().zip(scan.counts()) {
        w.serialize(ScanRow {
            position_mm: x,
            counts: n,
            duration_s: scan.duration_s(),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))?;
    let sidecar = Sidecar {
        arm: scan.arm,
        seed: scan.seed,
        meta: scan.meta.clone(),
    };
    write_json(&sidecar, &sidecar_path(path))
}

/// Reads a scan CSV; the sidecar is required.
pub fn read_scan(path: &Path) -> Result<CoincidenceScan, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let rows: Vec<ScanRow> = r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))?;
    let content = |message: String| IoError::Content {
        path: path.to_path_buf(),
        message,
    };
    let duration = rows.first().map(|r| r.duration_s).unwrap_or(1.0);
    if rows.iter().any(|r| r.duration_s != duration) {
        return Err(content("duration_s must be the same for every point".into()));
    }
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    CoincidenceScan::new(
        sidecar.arm,
        rows.iter().map(|r| r.position_mm).collect(),
        rows.iter().map(|r| r.counts).collect(),
        duration,
        sidecar.seed,
        sidecar.meta,
    )
    .map_err(|e: SynthError| content(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let f = File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err(path))?;
    w.write_all(b"\n").map_err(file_err(path))?;
    w.flush().map_err(file_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let f = File::open(path).map_err(file_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(json_err(path))
}
