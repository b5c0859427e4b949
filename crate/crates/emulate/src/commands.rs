//! The subcommands behind the `emulate` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emulate_core::eval::{compare, evaluate, ComparisonTable, EmulatorReport};
use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::{predict_batch, read_bundle, write_bundle};
use crate::config::{DatasetSpec, RunConfig};
use crate::io::{numbered, read_json, read_table, read_times, write_atomic, write_dataset, write_json, write_table};
use crate::pipeline::{measure_timing, prepare, train, TrainLog};

pub fn emulators_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("emulators")
}

pub fn reports_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("reports")
}

fn unit(cfg: &RunConfig) -> &'static str {
    match cfg.dataset {
        DatasetSpec::Catchment { .. } => "m³/s",
        _ => "-",
    }
}

/// Writes the dataset (with its split) to `<out>/dataset` and the resolved
/// configuration to `<out>/config.toml`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    let prep = prepare(cfg)?;
    let mut ds = prep.ds.clone();
    ds.metadata.insert("seed".into(), cfg.seed.to_string());
    ds.metadata.insert("code_version".into(), concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into());
    if let Some(g) = &prep.generator {
        let name = serde_json::to_value(g)?.get("generator").and_then(|v| v.as_str()).unwrap_or("files").to_string();
        ds.metadata.entry("generator".into()).or_insert(name);
    }
    let dir = cfg.out_dir().join("dataset");
    write_dataset(&dir, &ds, prep.generator.as_ref())?;
    write_atomic(&cfg.out_dir().join("config.toml"), cfg.to_toml()?.as_bytes())?;
    info!("wrote {} runs × {} times to {}", ds.n_runs(), ds.n_times(), dir.display());
    Ok(dir)
}

/// Trains every configured emulator and writes its bundle and `training_log.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainLog>> {
    let prep = prepare(cfg)?;
    let dir = emulators_dir(cfg);
    let logs = cfg
        .emulators
        .par_iter()
        .map(|spec| {
            let (trained, log) = train(spec, &prep).with_context(|| format!("training {}", spec.name()))?;
            write_bundle(&dir.join(spec.name()), spec.name(), &trained, &log.proxies, cfg.seed)?;
            info!("{}: trained in {:.2}s, training RMSE {:.3e}", log.name, log.seconds, log.train_rmse);
            Ok(log)
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&cfg.out_dir().join("training_log.json"), &logs)?;
    Ok(logs)
}

/// Loads each bundle, scores it on the test split and writes
/// `reports/<name>/report.{json,csv}` and `compare.md`.
pub fn cmd_evaluate(cfg: &RunConfig, plot: bool) -> Result<Vec<EmulatorReport>> {
    let prep = prepare(cfg)?;
    let reports = cfg
        .emulators
        .iter()
        .map(|spec| {
            let (_, emu) = read_bundle(&emulators_dir(cfg).join(spec.name()))?;
            let mut report = evaluate(spec.name(), &emu, &prep.ds, prep.test_runs())
                .with_context(|| format!("evaluating {}", spec.name()))?;
            if cfg.timing.enabled {
                report.timing = measure_timing(&emu, &prep, cfg.timing.runs, cfg.timing.repetitions)?;
            }
            let dir = reports_dir(cfg).join(spec.name());
            write_report(&dir, &report, prep.ds.params())?;
            if plot {
                write_histograms(&dir, &report)?;
            }
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    write_comparison(cfg, &compare(&reports, unit(cfg)))?;
    Ok(reports)
}

/// Rebuilds `compare.md` from the stored reports.
pub fn cmd_compare(cfg: &RunConfig) -> Result<ComparisonTable> {
    let reports = cfg
        .emulators
        .iter()
        .map(|spec| read_json::<EmulatorReport>(&reports_dir(cfg).join(spec.name()).join("report.json")))
        .collect::<Result<Vec<_>>>()?;
    let table = compare(&reports, unit(cfg));
    write_comparison(cfg, &table)?;
    Ok(table)
}

fn write_comparison(cfg: &RunConfig, table: &ComparisonTable) -> Result<()> {
    write_json(&cfg.out_dir().join("compare.json"), table)?;
    write_atomic(&cfg.out_dir().join("compare.md"), table.render_markdown().as_bytes())
}

pub fn write_report(dir: &Path, report: &EmulatorReport, params: &[Vec<f64>]) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    let dim = params.first().map_or(0, Vec::len);
    let mut header = vec!["run".to_string()];
    header.extend(numbered("theta", dim));
    header.extend(["mae", "rmse", "mae_pct", "rmse_pct"].map(String::from));
    let rows = report.runs.iter().enumerate().map(|(k, &j)| {
        let mut r = vec![j as f64];
        r.extend(&params[j]);
        r.extend([report.mae[k], report.rmse[k], report.mae_pct[k], report.rmse_pct[k]]);
        r
    });
    write_table(&dir.join("report.csv"), &header, rows)
}

/// 20-bin histograms of `log10` MAE and RMSE over the finite values.
fn write_histograms(dir: &Path, report: &EmulatorReport) -> Result<()> {
    for (name, values) in [("log10_mae", &report.mae), ("log10_rmse", &report.rmse)] {
        let logs: Vec<f64> = values.iter().map(|v| v.log10()).filter(|v| v.is_finite()).collect();
        let header = ["bin_lo", "bin_hi", "count"].map(String::from);
        let rows: Vec<Vec<f64>> = if logs.is_empty() {
            Vec::new()
        } else {
            let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = if hi > lo { (hi - lo) / 20.0 } else { 1.0 };
            let mut counts = [0usize; 20];
            for v in &logs {
                counts[(((v - lo) / width) as usize).min(19)] += 1;
            }
            (0..20).map(|b| vec![lo + b as f64 * width, lo + (b + 1) as f64 * width, counts[b] as f64]).collect()
        };
        write_table(&dir.join(format!("hist_{name}.csv")), &header, rows)?;
    }
    Ok(())
}

/// Parameter vectors from either inline `a,b;c,d` text or a CSV file with a header.
pub fn parse_thetas(inline: Option<&str>, file: Option<&Path>) -> Result<Vec<Vec<f64>>> {
    match (inline, file) {
        (Some(text), None) => text
            .split(';')
            .map(|set| {
                set.split(',')
                    .map(|v| v.trim().parse::<f64>().with_context(|| format!("{v:?} is not a number")))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect(),
        (None, Some(path)) => Ok(read_table(path)?.1),
        _ => bail!("give exactly one of --theta or --theta-file"),
    }
}

/// Predicts at `times` for every θ and writes `t` plus one column per θ.
pub fn cmd_predict(bundle: &Path, thetas: &[Vec<f64>], times_file: &Path, out: Option<&Path>) -> Result<DMatrix<f64>> {
    if thetas.is_empty() {
        bail!("no parameter sets given");
    }
    let times = read_times(times_file)?;
    let (_, emu) = read_bundle(bundle)?;
    let pred = predict_batch(&emu, thetas, &times)?;
    let mut header = vec!["t".to_string()];
    header.extend(numbered("series", thetas.len()));
    let rows = (0..times.len()).map(|i| {
        let mut r = vec![times[i]];
        r.extend(pred.row(i).iter());
        r
    });
    match out {
        Some(path) => write_table(path, &header, rows)?,
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(&header)?;
            for r in rows {
                w.write_record(r.iter().map(|v| crate::io::fmt_f64(*v)))?;
            }
            w.flush()?;
        }
    }
    Ok(pred)
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn mean_rmse(reports: &[EmulatorReport], name: &str) -> Result<f64> {
    reports
        .iter()
        .find(|r| r.name == name)
        .map(|r| r.rmse_summary.mean)
        .with_context(|| format!("experiment has no emulator named {name:?}"))
}

/// Pass/fail checks of an experiment's reports against its acceptance thresholds.
pub fn experiment_checks(experiment: &str, reports: &[EmulatorReport]) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut push = |criterion, name: &str, passed, detail: String| {
        checks.push(Check { criterion, name: name.into(), passed, detail })
    };
    match experiment {
        "ds1" => {
            let exact = reports.iter().find(|r| r.name == "mem-exact").context("ds1 needs mem-exact")?;
            let max = exact.mae_summary.max;
            push(1, "MEM exactness on DS-I", max < 1e-6, format!("max abs error {max:.3e} (limit 1e-6)"));
            let ratio = mean_rmse(reports, "svd")? / exact.rmse_summary.mean;
            push(2, "SVD time-interpolation failure on DS-I", ratio >= 100.0, format!("SVD/MEM RMSE ratio {ratio:.3e} (limit 100)"));
        }
        "ds2" => {
            let (fit, exact) = (mean_rmse(reports, "mem-fit")?, mean_rmse(reports, "mem-exact")?);
            push(3, "epistemic-bias reduction on DS-II", fit <= exact + 1e-12, format!("MEM-fit {fit:.4e} vs MEM-exact {exact:.4e}, improvement ×{:.3}", exact / fit));
        }
        "catchment" => {
            let nmf = reports.iter().find(|r| r.name == "nmf").context("catchment needs nmf")?;
            let pct = nmf.rmse_pct_summary.mean;
            push(8, "catchment: NMF RMSE < 10% of range", pct < 10.0, format!("{pct:.3}%"));
            let dd = mean_rmse(reports, "nmf")?.max(mean_rmse(reports, "svd")?);
            let (fit, exact) = (mean_rmse(reports, "mem-fit")?, mean_rmse(reports, "mem-exact")?);
            let mech = fit.min(exact);
            push(8, "catchment: data-driven ≤ mechanistic", dd <= mech, format!("worst data-driven {dd:.4e} vs best MEM {mech:.4e}"));
            push(8, "catchment: MEM-fit ≤ MEM-exact", fit <= exact, format!("{fit:.4e} vs {exact:.4e}"));
            if let Some(t) = nmf.timing {
                push(9, "speed-up of the data-driven emulator", t.speedup >= 100.0, format!("×{:.0} (limit 100)", t.speedup));
            }
        }
        other => bail!("unknown experiment {other:?}"),
    }
    let all = reports.iter().all(EmulatorReport::mae_dominates_rmse);
    checks.push(Check { criterion: 10, name: "MAE ≥ RMSE on every run".into(), passed: all, detail: String::new() });
    Ok(checks)
}

/// Generate, train, evaluate and compare, then check the acceptance thresholds.
pub fn cmd_repro(cfg: &RunConfig) -> Result<Vec<Check>> {
    cmd_generate(cfg)?;
    cmd_train(cfg)?;
    let reports = cmd_evaluate(cfg, false)?;
    let checks = experiment_checks(&cfg.experiment, &reports)?;
    write_json(&cfg.out_dir().join("acceptance.json"), &checks)?;
    Ok(checks)
}
