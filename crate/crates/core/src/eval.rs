//! Per-run error metrics, their distribution summaries, and comparison tables.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::dataset::TimeSeriesDataset;
use crate::error::{check_finite, check_len};
use crate::{Emulator, Error, Result};

fn check_pair(emulated: &[f64], simulated: &[f64]) -> Result<()> {
    check_len("emulated vs simulated series", simulated.len(), emulated.len())?;
    if emulated.is_empty() {
        return Err(Error::config("error metrics need at least one point"));
    }
    check_finite("emulated series", emulated)?;
    check_finite("simulated series", simulated)
}

/// Maximum absolute error `max_i |ŷ_i − y_i|`.
pub fn mae(emulated: &[f64], simulated: &[f64]) -> Result<f64> {
    check_pair(emulated, simulated)?;
    Ok(emulated.iter().zip(simulated).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Root mean square error `sqrt(mean((ŷ − y)²))`.
pub fn rmse(emulated: &[f64], simulated: &[f64]) -> Result<f64> {
    check_pair(emulated, simulated)?;
    let ss: f64 = emulated.iter().zip(simulated).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / emulated.len() as f64).sqrt())
}

/// Distribution summary; quartiles use linear interpolation between order
/// statistics (`h = (n−1)p`).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64"))]
    pub mean: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64"))]
    pub median: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64"))]
    pub q1: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64"))]
    pub q3: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64"))]
    pub min: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64"))]
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("cannot summarize an empty sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("summary sample"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = if sorted[0] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            sorted.iter().sum::<f64>() / sorted.len() as f64
        };
        Ok(Self {
            mean,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }

    /// Summary of `log10(values)`; exact (zero) errors map to `−∞`.
    pub fn of_log10(values: &[f64]) -> Result<Self> {
        let logs: Vec<f64> = values.iter().map(|&v| if v == 0.0 { f64::NEG_INFINITY } else { v.log10() }).collect();
        Self::of(&logs)
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let w = h - lo as f64;
    if w == 0.0 || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

/// Renders a log10 statistic, spelling the `−∞` sentinel as "exact".
pub fn format_log10(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "exact".to_string()
    } else {
        format!("{v:.3}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Timing {
    pub simulator_seconds_per_run: f64,
    pub emulator_seconds_per_run: f64,
    pub speedup: f64,
}

impl Timing {
    pub fn new(simulator_seconds_per_run: f64, emulator_seconds_per_run: f64) -> Self {
        Self { simulator_seconds_per_run, emulator_seconds_per_run, speedup: simulator_seconds_per_run / emulator_seconds_per_run }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmulatorReport {
    pub name: String,
    /// Dataset column of every evaluated run.
    pub runs: Vec<usize>,
    pub mae: Vec<f64>,
    pub rmse: Vec<f64>,
    /// `max − min` of all simulated test values; the normalizer of the `%` metrics.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64"))]
    pub signal_range: f64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64::vec"))]
    pub mae_pct: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_f64::vec"))]
    pub rmse_pct: Vec<f64>,
    pub mae_summary: Summary,
    pub rmse_summary: Summary,
    pub mae_pct_summary: Summary,
    pub rmse_pct_summary: Summary,
    pub log10_mae: Summary,
    pub log10_rmse: Summary,
    pub timing: Option<Timing>,
}

impl EmulatorReport {
    /// Builds the report from predicted and simulated series of each run.
    pub fn from_series(name: &str, runs: Vec<usize>, predicted: &[Vec<f64>], simulated: &[Vec<f64>]) -> Result<Self> {
        check_len("predicted runs", runs.len(), predicted.len())?;
        check_len("simulated runs", runs.len(), simulated.len())?;
        if runs.is_empty() {
            return Err(Error::config("evaluation needs at least one test run"));
        }
        let mut mae_v = Vec::with_capacity(runs.len());
        let mut rmse_v = Vec::with_capacity(runs.len());
        for ((p, s), &run) in predicted.iter().zip(simulated).zip(&runs) {
            mae_v.push(mae(p, s).map_err(|e| e.in_run(run))?);
            rmse_v.push(rmse(p, s).map_err(|e| e.in_run(run))?);
        }
        let (lo, hi) = simulated
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let range = hi - lo;
        let pct = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|x| if range > 0.0 { 100.0 * x / range } else if *x == 0.0 { 0.0 } else { f64::INFINITY }).collect()
        };
        let mae_pct = pct(&mae_v);
        let rmse_pct = pct(&rmse_v);
        Ok(Self {
            name: name.to_string(),
            runs,
            mae_summary: Summary::of(&mae_v)?,
            rmse_summary: Summary::of(&rmse_v)?,
            mae_pct_summary: Summary::of(&mae_pct)?,
            rmse_pct_summary: Summary::of(&rmse_pct)?,
            log10_mae: Summary::of_log10(&mae_v)?,
            log10_rmse: Summary::of_log10(&rmse_v)?,
            mae: mae_v,
            rmse: rmse_v,
            signal_range: range,
            mae_pct,
            rmse_pct,
            timing: None,
        })
    }

    /// True if `mae ≥ rmse` holds for every run.
    pub fn mae_dominates_rmse(&self) -> bool {
        self.mae.iter().zip(&self.rmse).all(|(m, r)| *m >= *r)
    }
}

/// Predicts every test run of `ds` at the dataset times and scores it.
pub fn evaluate<E: Emulator + ?Sized>(name: &str, emulator: &E, ds: &TimeSeriesDataset, test: &[usize]) -> Result<EmulatorReport> {
    let mut predicted = Vec::with_capacity(test.len());
    let mut simulated = Vec::with_capacity(test.len());
    for &j in test {
        if j >= ds.n_runs() {
            return Err(Error::config(format!("test run {j} out of range")));
        }
        predicted.push(emulator.predict(&ds.params()[j], ds.times()).map_err(|e| e.in_run(j))?);
        simulated.push(ds.column(j));
    }
    EmulatorReport::from_series(name, test.to_vec(), &predicted, &simulated)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonRow {
    pub name: String,
    pub mean_mae: f64,
    pub mean_mae_pct: f64,
    pub mean_rmse: f64,
    pub mean_rmse_pct: f64,
    pub speedup: Option<f64>,
}

/// Mean errors side by side, sorted by mean RMSE (ties by name).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComparisonTable {
    pub unit: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(reports: &[EmulatorReport], unit: &str) -> ComparisonTable {
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            name: r.name.clone(),
            mean_mae: r.mae_summary.mean,
            mean_mae_pct: r.mae_pct_summary.mean,
            mean_rmse: r.rmse_summary.mean,
            mean_rmse_pct: r.rmse_pct_summary.mean,
            speedup: r.timing.map(|t| t.speedup),
        })
        .collect();
    rows.sort_by(|a, b| a.mean_rmse.total_cmp(&b.mean_rmse).then_with(|| a.name.cmp(&b.name)));
    ComparisonTable { unit: unit.to_string(), rows }
}

fn sig(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e-3 && v.abs() < 1e5 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

impl ComparisonTable {
    pub fn render_markdown(&self) -> String {
        let mut out = format!("| Emulator | MAE ({u}, %) | RMSE ({u}, %) | Speed-up |\n|---|---|---|---|\n", u = self.unit);
        for r in &self.rows {
            let speed = r.speedup.map_or("-".to_string(), |s| if s >= 10.0 { format!("{s:.0}") } else { format!("{s:.2}") });
            out += &format!(
                "| {} | {} ({}) | {} ({}) | {} |\n",
                r.name,
                sig(r.mean_mae),
                sig(r.mean_mae_pct),
                sig(r.mean_rmse),
                sig(r.mean_rmse_pct),
                speed
            );
        }
        out
    }

    /// Row-wise differences `self − other` of the mean metrics, matched by name.
    pub fn differences(&self, other: &ComparisonTable) -> Vec<(String, f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| {
                other.rows.iter().find(|o| o.name == r.name).map(|o| (r.name.clone(), r.mean_mae - o.mean_mae, r.mean_rmse - o.mean_rmse))
            })
            .collect()
    }
}
