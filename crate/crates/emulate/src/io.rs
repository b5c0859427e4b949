//! On-disk formats: datasets, emulator bundles and reports.
//!
//! Floats are written with 17 significant digits so that every value reads
//! back bit-identical. Files are written to a temporary sibling and renamed.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use emulate_core::dataset::{Split, TimeSeriesDataset};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::DatasetSpec;

/// 17 significant digits, shortest exponent form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing into {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes a table with a header row; `rows[i][j]` is row `i`, column `j`.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            bail!("{}: row of {} values under {} columns", path.display(), row.len(), header.len());
        }
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    write_atomic(path, &w.into_inner()?)
}

/// Header and rows of a numeric CSV table.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().with_context(|| format!("{}: row {}: {s:?} is not a number", path.display(), i + 1)))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            bail!("{}: row {} has {} values, expected {}", path.display(), i + 1, row.len(), header.len());
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_matrix(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    write_table(path, header, m.row_iter().map(|r| r.iter().copied().collect()))
}

pub fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let (header, rows) = read_table(path)?;
    let m = DMatrix::from_fn(rows.len(), header.len(), |i, j| rows[i][j]);
    Ok((header, m))
}

pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i:04}")).collect()
}

/// Single-column times file with header `t`.
pub fn read_times(path: &Path) -> Result<Vec<f64>> {
    let (header, rows) = read_table(path)?;
    if header.len() != 1 {
        bail!("{}: expected one column, found {}", path.display(), header.len());
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

pub fn write_times(path: &Path, times: &[f64]) -> Result<()> {
    write_table(path, &["t".to_string()], times.iter().map(|&t| vec![t]))
}

/// Writes `times.csv`, `outputs.csv`, `params.csv`, `split.json` (when split),
/// `metadata.json` and, when known, `generator.json`.
pub fn write_dataset(dir: &Path, ds: &TimeSeriesDataset, generator: Option<&DatasetSpec>) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_times(&dir.join("times.csv"), ds.times())?;
    write_matrix(&dir.join("outputs.csv"), &numbered("run", ds.n_runs()), ds.outputs())?;
    write_table(&dir.join("params.csv"), ds.param_names(), ds.params().iter().cloned())?;
    if let Some(split) = ds.split() {
        write_json(&dir.join("split.json"), split)?;
    }
    write_json(&dir.join("metadata.json"), &ds.metadata)?;
    if let Some(g) = generator {
        write_json(&dir.join("generator.json"), g)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<TimeSeriesDataset> {
    let times = read_times(&dir.join("times.csv"))?;
    let (_, outputs) = read_matrix(&dir.join("outputs.csv"))?;
    let (names, params) = read_table(&dir.join("params.csv"))?;
    let mut ds = TimeSeriesDataset::new(times, outputs, params, names)
        .with_context(|| format!("dataset in {}", dir.display()))?;
    let meta = dir.join("metadata.json");
    if meta.exists() {
        ds.metadata = read_json(&meta)?;
    }
    let split = dir.join("split.json");
    if split.exists() {
        let s: Split = read_json(&split)?;
        ds = ds.with_split(s)?;
    }
    Ok(ds)
}
