//! Dataset preparation, emulator training and evaluation for a [`RunConfig`].

use std::time::Instant;

use anyhow::{bail, Context, Result};
use emulate_core::datadriven::{train_on, DataDrivenConfig, DataDrivenEmulator};
use emulate_core::dataset::{
    evenly_spaced_indices, generate_catchment_dataset, generate_nonlinear_ds, simulate_toy_catchment, split_dataset,
    subsample_times, RainEvent, TimeSeriesDataset,
};
use emulate_core::eval::{evaluate, EmulatorReport, Timing};
use emulate_core::factorization::NmfConfig;
use emulate_core::gp::{GpConfig, KernelSpec};
use emulate_core::mem::{
    build_param_map, condition_mem, fit_proxy, optimize_coupling, sde_covariance, train_warped_mem, Actuation, Coupling,
    FitConfig, InitialState, MemEmulator, MemPrior, ParamMap, ProxyTemplate, WarpFit, WarpedMem,
};
use emulate_core::Emulator;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::config::{CouplingSpec, DatasetSpec, EmulatorSpec, Mapping, RunConfig};

/// Builds the dataset described by `spec` (without a split).
pub fn build_dataset(spec: &DatasetSpec) -> Result<TimeSeriesDataset> {
    match spec {
        DatasetSpec::NonlinearDs { config } => Ok(generate_nonlinear_ds(config)?),
        DatasetSpec::Catchment { simulator, design, output_times, spacing_power } => {
            let full = generate_catchment_dataset(simulator, design)?;
            let keep = catchment_time_indices(simulator.grid.len, *output_times, *spacing_power)?;
            let mut ds = subsample_times(&full, &keep)?;
            ds.metadata.insert("time_subsampling".into(), format!("power {spacing_power}, {output_times} of {}", simulator.grid.len));
            Ok(ds)
        }
        DatasetSpec::Files { dir } => crate::io::read_dataset(dir),
    }
}

/// `round((n−1)·(k/(count−1))^power)`, denser at early times for `power > 1`.
pub fn catchment_time_indices(n: usize, count: usize, power: f64) -> Result<Vec<usize>> {
    if count < 2 || count > n {
        bail!("cannot keep {count} of {n} times");
    }
    let idx: Vec<usize> =
        (0..count).map(|k| ((n - 1) as f64 * (k as f64 / (count - 1) as f64).powf(power)).round() as usize).collect();
    if idx.windows(2).any(|w| w[1] <= w[0]) {
        bail!("time subsampling with power {power} repeats grid points; lower the power or the count");
    }
    Ok(idx)
}

/// The generator behind a dataset spec; file datasets carry it in `generator.json`.
pub fn resolve_generator(spec: &DatasetSpec) -> Result<Option<DatasetSpec>> {
    match spec {
        DatasetSpec::Files { dir } => {
            let path = dir.join("generator.json");
            if !path.exists() {
                return Ok(None);
            }
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
        }
        other => Ok(Some(other.clone())),
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub ds: TimeSeriesDataset,
    /// Generator of the dataset, when known (needed by mechanistic emulators).
    pub generator: Option<DatasetSpec>,
    pub train_time_indices: Vec<usize>,
    pub seed: u64,
}

impl Prepared {
    pub fn train_runs(&self) -> &[usize] {
        &self.ds.split().expect("prepared datasets are split").train
    }

    pub fn test_runs(&self) -> &[usize] {
        &self.ds.split().expect("prepared datasets are split").test
    }

    pub fn train_times(&self) -> Vec<f64> {
        self.train_time_indices.iter().map(|&i| self.ds.times()[i]).collect()
    }

    pub fn train_thetas(&self) -> Vec<Vec<f64>> {
        self.ds.select_params(self.train_runs())
    }

    /// Training outputs restricted to the training times.
    pub fn train_outputs(&self) -> DMatrix<f64> {
        self.ds.select_columns(self.train_runs()).select_rows(&self.train_time_indices)
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let ds = build_dataset(&cfg.dataset)?;
    let ds = if ds.split().is_some() && matches!(cfg.dataset, DatasetSpec::Files { .. }) {
        ds
    } else {
        split_dataset(&ds, cfg.split.n_train, cfg.seed)?
    };
    let train_time_indices = match &cfg.split.train_time_indices {
        Some(idx) => {
            if idx.len() < 2 || idx.windows(2).any(|w| w[1] <= w[0]) || idx.iter().any(|&i| i >= ds.n_times()) {
                bail!("train_time_indices must be increasing, in range, and keep at least two times");
            }
            idx.clone()
        }
        None => (0..ds.n_times()).collect(),
    };
    Ok(Prepared { generator: resolve_generator(&cfg.dataset)?, ds, train_time_indices, seed: cfg.seed })
}

/// Reference simulator output of one run at `times`.
pub fn simulate(generator: &DatasetSpec, theta: &[f64], times: &[f64]) -> Result<Vec<f64>> {
    match generator {
        DatasetSpec::NonlinearDs { config } => Ok(config.simulate(theta[0], times)),
        DatasetSpec::Catchment { simulator, design, .. } => {
            let event = RainEvent { intensity: theta[0], duration: theta[1], start: design.start };
            let run = simulate_toy_catchment(simulator, &event)?;
            let grid = simulator.grid;
            times
                .iter()
                .map(|&t| {
                    let k = ((t - grid.start) / grid.step).round();
                    if k < 0.0 || k as usize >= grid.len || (grid.start + k * grid.step - t).abs() > 1e-9 * grid.step.max(1.0) {
                        bail!("time {t} is not on the simulator grid");
                    }
                    Ok(run.outflow[k as usize])
                })
                .collect()
        }
        DatasetSpec::Files { .. } => bail!("file datasets have no simulator"),
    }
}

pub fn proxy_template(generator: &DatasetSpec, sigma0: f64) -> Result<ProxyTemplate> {
    let mut tpl = match generator {
        DatasetSpec::NonlinearDs { .. } => ProxyTemplate::first_order(Actuation::Constant, InitialState::Param(0)),
        DatasetSpec::Catchment { simulator, design, .. } => {
            let s0 = simulator.initial_storage;
            let y0 = simulator.area * simulator.coefficient * s0.powf(simulator.exponent);
            ProxyTemplate::first_order(Actuation::BlockRain { grid: simulator.grid, start: design.start }, InitialState::Value(y0))
        }
        DatasetSpec::Files { .. } => bail!("file datasets need a generator.json for mechanistic emulators"),
    };
    tpl.sigma0 = sigma0;
    Ok(tpl)
}

pub fn exact_map(generator: &DatasetSpec) -> Result<ParamMap> {
    match generator {
        DatasetSpec::NonlinearDs { config } => Ok(ParamMap::NonlinearDs { system: config.system }),
        DatasetSpec::Catchment { simulator, .. } => Ok(ParamMap::ReservoirEquilibrium {
            exponent: simulator.exponent,
            coefficient: simulator.coefficient,
            area: simulator.area,
        }),
        DatasetSpec::Files { .. } => bail!("file datasets have no exact parameter map"),
    }
}

#[derive(Clone, Debug)]
pub enum Trained {
    DataDriven(DataDrivenEmulator),
    Mem(MemEmulator),
    Warped(WarpedMem),
}

impl Emulator for Trained {
    fn predict(&self, theta: &[f64], times: &[f64]) -> emulate_core::Result<Vec<f64>> {
        match self {
            Trained::DataDriven(e) => e.predict(theta, times),
            Trained::Mem(e) => e.predict(theta, times),
            Trained::Warped(e) => e.predict(theta, times),
        }
    }
}

/// Per-run proxy fit, for `proxies.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct ProxyRecord {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainLog {
    pub name: String,
    #[serde(skip)]
    pub seconds: f64,
    /// Mean RMSE and largest absolute error over the training runs at all dataset times.
    pub train_rmse: f64,
    pub train_max_abs_error: f64,
    pub details: serde_json::Value,
    #[serde(skip)]
    pub proxies: Vec<ProxyRecord>,
}

fn gp_config(seed: u64) -> GpConfig {
    GpConfig { seed, ..GpConfig::default() }
}

pub fn train(spec: &EmulatorSpec, prep: &Prepared) -> Result<(Trained, TrainLog)> {
    let start = Instant::now();
    let (trained, details, proxies) = match spec {
        EmulatorSpec::DataDriven { method, q, nmf_a, nmf_b, clip_negative, sharing, .. } => {
            let cfg = DataDrivenConfig {
                method: *method,
                q: *q,
                nmf: NmfConfig { a: *nmf_a, b: *nmf_b, seed: prep.seed, ..NmfConfig::default() },
                gp: GpConfig { sharing: *sharing, ..gp_config(prep.seed) },
                clip_negative: *clip_negative,
            };
            let emu = train_on(&prep.train_times(), &prep.train_outputs(), &prep.train_thetas(), &cfg)?;
            let details = json!({
                "method": method,
                "q": q,
                "reconstruction_error": emu.factor.reconstruction_error,
                "iterations": emu.factor.iterations,
                "objective_final": emu.factor.objective_history.last(),
                "kernels": emu.gp.kernels,
                "log_marginal_likelihood": emu.gp.log_marginal_likelihood,
                "jitters": emu.gp.jitters(),
            });
            (Trained::DataDriven(emu), details, Vec::new())
        }
        EmulatorSpec::Mem { mapping, coupling, warp, time_stride, sigma0, .. } => {
            train_mem(prep, *mapping, coupling, *warp, *time_stride, *sigma0)?
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let fit = evaluate(spec.name(), &trained, &prep.ds, prep.train_runs()).context("scoring the training runs")?;
    let log = TrainLog {
        name: spec.name().to_string(),
        seconds,
        train_rmse: fit.rmse_summary.mean,
        train_max_abs_error: fit.mae_summary.max,
        details,
        proxies,
    };
    Ok((trained, log))
}

fn train_mem(
    prep: &Prepared,
    mapping: Mapping,
    coupling_spec: &CouplingSpec,
    warp: bool,
    stride: usize,
    sigma0: f64,
) -> Result<(Trained, serde_json::Value, Vec<ProxyRecord>)> {
    let generator = prep.generator.as_ref().context("mechanistic emulators need a known dataset generator")?;
    let template = proxy_template(generator, sigma0)?;
    let thetas = prep.train_thetas();
    let fit_times = prep.train_times();
    let fit_outputs = prep.train_outputs();
    let cond_rows: Vec<usize> = (0..fit_times.len()).step_by(stride).collect();
    let cond_times: Vec<f64> = cond_rows.iter().map(|&i| fit_times[i]).collect();
    let cond_outputs = fit_outputs.select_rows(&cond_rows);
    let fit_cfg = FitConfig { seed: prep.seed, ..FitConfig::default() };
    let gp_cfg = gp_config(prep.seed);

    if warp {
        if mapping != Mapping::Fitted {
            bail!("warped emulators learn their proxies; use mapping = \"fitted\"");
        }
        let coupling = match coupling_spec {
            CouplingSpec::Uncoupled { variance } => Coupling::Uncoupled { variance: *variance },
            CouplingSpec::Matern { lengthscale, .. } => {
                Coupling::Kernel { kernel: KernelSpec::matern(coupling_spec.nu()?, param_ranges(&thetas, *lengthscale), 1.0) }
            }
        };
        let (emu, fits) = train_warped_mem(&template, coupling, &thetas, &cond_times, &cond_outputs, &fit_cfg, &gp_cfg, f64::EPSILON)?;
        let records = warp_records(&thetas, &fits);
        let fallbacks = fits.iter().filter(|f| f.identity_fallback).count();
        let details = json!({ "mapping": "fitted", "warp": true, "identity_fallbacks": fallbacks, "jitter": emu.mem.jitter() });
        return Ok((Trained::Warped(emu), details, records));
    }

    let (map, records) = match mapping {
        Mapping::Exact => (exact_map(generator)?, Vec::new()),
        Mapping::Fitted => {
            let mut psis = Vec::with_capacity(thetas.len());
            let mut records = Vec::with_capacity(thetas.len());
            for (j, th) in thetas.iter().enumerate() {
                let col: Vec<f64> = fit_outputs.column(j).iter().copied().collect();
                let fit = fit_proxy(&col, &fit_times, &template, th, &fit_cfg).map_err(|e| e.in_run(prep.train_runs()[j]))?;
                records.push(ProxyRecord { theta: th.clone(), psi: fit.psi.clone(), residual: fit.residual });
                psis.push(fit.psi);
            }
            (build_param_map(&thetas, &psis, template.order, &gp_cfg)?, records)
        }
    };

    let mut prior = MemPrior { template, coupling: Coupling::Uncoupled { variance: 1.0 }, map };
    let mut details = json!({ "mapping": mapping, "warp": false, "conditioning_points": thetas.len() * cond_times.len() });
    match coupling_spec {
        CouplingSpec::Uncoupled { variance } => prior.coupling = Coupling::Uncoupled { variance: *variance },
        CouplingSpec::Matern { lengthscale, optimize_runs, restarts, .. } => {
            let scales = param_ranges(&thetas, 1.0);
            let var0 = initial_noise_variance(&prior, &thetas, &cond_times, &cond_outputs)?;
            let kernel = KernelSpec::matern(coupling_spec.nu()?, scales.iter().map(|r| r * lengthscale).collect(), var0);
            prior.coupling = Coupling::Kernel { kernel: kernel.clone() };
            let subset: Vec<usize> = if *optimize_runs == 0 || *optimize_runs >= thetas.len() {
                (0..thetas.len()).collect()
            } else {
                evenly_spaced_indices(thetas.len(), *optimize_runs)
            };
            let mut bounds: Vec<(f64, f64)> = scales.iter().map(|r| ((0.01 * r).ln(), (20.0 * r).ln())).collect();
            bounds.push(((var0 * 1e-6).ln(), (var0 * 1e4).ln()));
            let fit = optimize_coupling(&prior, &thetas, &cond_times, &cond_outputs, &subset, &bounds, *restarts, prep.seed)?;
            details["coupling_initial"] = json!(kernel);
            details["coupling"] = json!(fit.kernel);
            details["coupling_log_marginal_likelihood"] = json!(fit.log_marginal_likelihood);
            details["coupling_runs"] = json!(subset.len());
            prior.coupling = Coupling::Kernel { kernel: fit.kernel };
        }
    }
    let emu = condition_mem(prior, &thetas, &cond_times, &cond_outputs, f64::EPSILON)?;
    details["jitter"] = json!(emu.jitter());
    Ok((Trained::Mem(emu), details, records))
}

fn warp_records(thetas: &[Vec<f64>], fits: &[WarpFit]) -> Vec<ProxyRecord> {
    thetas
        .iter()
        .zip(fits)
        .map(|(th, f)| ProxyRecord { theta: th.clone(), psi: f.psi.clone(), residual: f.residual })
        .collect()
}

/// `factor·(max − min)` of each parameter over the training runs (1 if constant).
fn param_ranges(thetas: &[Vec<f64>], factor: f64) -> Vec<f64> {
    let dim = thetas.first().map_or(0, Vec::len);
    (0..dim)
        .map(|d| {
            let lo = thetas.iter().map(|t| t[d]).fold(f64::INFINITY, f64::min);
            let hi = thetas.iter().map(|t| t[d]).fold(f64::NEG_INFINITY, f64::max);
            factor * if hi > lo { hi - lo } else { 1.0 }
        })
        .collect()
}

/// Noise variance that makes the unit-coupling prior variance match the mean
/// squared residual of the proxy means at the conditioning points.
fn initial_noise_variance(prior: &MemPrior, thetas: &[Vec<f64>], times: &[f64], outputs: &DMatrix<f64>) -> Result<f64> {
    let mut resid2 = 0.0;
    let mut unit = 0.0;
    for (j, th) in thetas.iter().enumerate() {
        let proxy = prior.proxy(th)?;
        let mean = proxy.mean_series(times)?;
        for (i, &t) in times.iter().enumerate() {
            resid2 += (outputs[(i, j)] - mean[i]).powi(2);
            unit += sde_covariance(&proxy, &proxy, t, t, 1.0, false)?;
        }
    }
    Ok(if resid2 > 0.0 && unit > 0.0 { resid2 / unit } else { 1.0 })
}

/// Median of `repetitions` wall-clock measurements of `f`, in seconds.
pub fn median_seconds<F: FnMut() -> Result<()>>(repetitions: usize, mut f: F) -> Result<f64> {
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions.max(1) {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64());
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    Ok(if n % 2 == 1 { samples[n / 2] } else { 0.5 * (samples[n / 2 - 1] + samples[n / 2]) })
}

/// Prediction and simulation time per run over the first `runs` test runs.
pub fn measure_timing(emu: &Trained, prep: &Prepared, runs: usize, repetitions: usize) -> Result<Option<Timing>> {
    let Some(generator) = prep.generator.as_ref() else { return Ok(None) };
    let test = prep.test_runs();
    let chosen: Vec<usize> = if runs == 0 || runs >= test.len() { test.to_vec() } else { test[..runs].to_vec() };
    let times = prep.ds.times();
    let params = prep.ds.params();
    let emu_total = median_seconds(repetitions, || {
        for &j in &chosen {
            std::hint::black_box(emu.predict(std::hint::black_box(&params[j]), times)?);
        }
        Ok(())
    })?;
    let sim_total = median_seconds(repetitions, || {
        for &j in &chosen {
            std::hint::black_box(simulate(generator, std::hint::black_box(&params[j]), times)?);
        }
        Ok(())
    })?;
    let n = chosen.len() as f64;
    Ok(Some(Timing::new(sim_total / n, emu_total / n)))
}

pub struct Outcome {
    pub trained: Trained,
    pub log: TrainLog,
    pub report: EmulatorReport,
}

/// Trains, evaluates on the test split and times one emulator.
pub fn run_emulator(spec: &EmulatorSpec, prep: &Prepared, cfg: &RunConfig) -> Result<Outcome> {
    let (trained, log) = train(spec, prep).with_context(|| format!("training {}", spec.name()))?;
    let mut report = evaluate(spec.name(), &trained, &prep.ds, prep.test_runs()).with_context(|| format!("evaluating {}", spec.name()))?;
    if cfg.timing.enabled {
        report.timing = measure_timing(&trained, prep, cfg.timing.runs, cfg.timing.repetitions)?;
    }
    Ok(Outcome { trained, log, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_spacing_is_strictly_increasing() {
        let idx = catchment_time_indices(2880, 52, 2.0).unwrap();
        assert_eq!(idx.len(), 52);
        assert_eq!((idx[0], idx[51]), (0, 2879));
        assert!(idx.windows(2).all(|w| w[1] > w[0]));
        assert!(catchment_time_indices(10, 9, 3.0).is_err());
    }

    #[test]
    fn simulator_reproduces_dataset_columns() {
        let cfg = RunConfig::preset("ds2").unwrap();
        let prep = prepare(&cfg).unwrap();
        let g = prep.generator.as_ref().unwrap();
        for &j in &prep.test_runs()[..3] {
            assert_eq!(simulate(g, &prep.ds.params()[j], prep.ds.times()).unwrap(), prep.ds.column(j));
        }
    }
}
