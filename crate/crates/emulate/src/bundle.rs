//! Emulator bundles: one directory per trained emulator.
//!
//! Data-driven: `emulator_meta.json`, `times.csv`, `basis.csv`, `coeffs.csv`,
//! `factor_meta.json` and the `gp_*` files of the coefficient regression.
//! Mechanistic: `emulator_meta.json`, `mem_meta.json`, `gp_alpha.csv`,
//! `gp_train_inputs.csv`, `proxies.csv`, and `map/gp_*` / `warp_map/gp_*` for
//! the learned parameter and warp maps.

use std::path::Path;

use anyhow::{bail, Context, Result};
use emulate_core::datadriven::DataDrivenEmulator;
use emulate_core::dataset::NonlinearDs;
use emulate_core::factorization::{FactorMethod, FactorModel};
use emulate_core::gp::{GpRegression, KernelSpec};
use emulate_core::mem::{Coupling, MemEmulator, MemPrior, ParamMap, ProxyTemplate, WarpSpec, WarpedMem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{numbered, read_json, read_matrix, read_table, read_times, write_json, write_matrix, write_table, write_times};
use crate::pipeline::{ProxyRecord, Trained};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmulatorMeta {
    DataDriven { name: String, method: FactorMethod, q: usize, clip_negative: bool, grid_hash: String },
    Mem { name: String, warped: bool },
}

impl EmulatorMeta {
    pub fn name(&self) -> &str {
        match self {
            EmulatorMeta::DataDriven { name, .. } | EmulatorMeta::Mem { name, .. } => name,
        }
    }
}

/// SHA-256 of the little-endian bit patterns of `times`.
pub fn grid_hash(times: &[f64]) -> String {
    let mut h = Sha256::new();
    for t in times {
        h.update(t.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct FactorMeta {
    method: FactorMethod,
    q: usize,
    a: f64,
    b: f64,
    objective: Option<f64>,
    objective_history: Vec<f64>,
    iterations: usize,
    singular_values: Vec<f64>,
    reconstruction_error: f64,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GpMeta {
    kernels: Vec<KernelSpec>,
    kappa: f64,
    jitters: Vec<f64>,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    output_means: Vec<f64>,
    log_marginal_likelihood: Vec<Option<f64>>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn write_gp(dir: &Path, gp: &GpRegression) -> Result<()> {
    let meta = GpMeta {
        kernels: gp.kernels.clone(),
        kappa: gp.kappa,
        jitters: gp.jitters(),
        input_mean: gp.input_mean.clone(),
        input_scale: gp.input_scale.clone(),
        output_means: gp.output_means.clone(),
        log_marginal_likelihood: gp.log_marginal_likelihood.iter().copied().map(finite).collect(),
    };
    write_json(&dir.join("gp_meta.json"), &meta)?;
    write_matrix(&dir.join("gp_alpha.csv"), &numbered("output", gp.n_outputs()), &gp.alphas)?;
    write_table(&dir.join("gp_train_inputs.csv"), &numbered("theta", gp.input_dim()), gp.train_inputs.iter().cloned())
}

pub fn read_gp(dir: &Path) -> Result<GpRegression> {
    let meta: GpMeta = read_json(&dir.join("gp_meta.json"))?;
    let (_, alphas) = read_matrix(&dir.join("gp_alpha.csv"))?;
    let (_, inputs) = read_table(&dir.join("gp_train_inputs.csv"))?;
    let mut gp = GpRegression::from_parts(
        meta.input_mean,
        meta.input_scale,
        meta.output_means,
        inputs,
        meta.kernels,
        alphas,
        meta.kappa,
        &meta.jitters,
    )
    .with_context(|| format!("rebuilding the GP in {}", dir.display()))?;
    gp.log_marginal_likelihood = meta.log_marginal_likelihood.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    Ok(gp)
}

/// Persisted form of the parameter map; learned maps keep their GP in `map/`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum MapMeta {
    NonlinearDs { system: NonlinearDs },
    ReservoirEquilibrium { exponent: f64, coefficient: f64, area: f64 },
    Learned { order: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct MemMeta {
    template: ProxyTemplate,
    coupling: Coupling,
    map: MapMeta,
    warps: Option<Vec<WarpSpec>>,
    train_times: Vec<f64>,
    kappa: f64,
    jitter: f64,
}

pub fn write_bundle(dir: &Path, name: &str, trained: &Trained, proxies: &[ProxyRecord], seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    match trained {
        Trained::DataDriven(emu) => {
            let f = &emu.factor;
            write_json(
                &dir.join("emulator_meta.json"),
                &EmulatorMeta::DataDriven {
                    name: name.to_string(),
                    method: f.method,
                    q: f.rank(),
                    clip_negative: emu.clip_negative,
                    grid_hash: grid_hash(&emu.times),
                },
            )?;
            write_times(&dir.join("times.csv"), &emu.times)?;
            write_matrix(&dir.join("basis.csv"), &numbered("phi", f.rank()), &f.basis)?;
            write_matrix(&dir.join("coeffs.csv"), &numbered("run", f.coeffs.ncols()), &f.coeffs)?;
            let (a, b) = f.nmf_weights.unwrap_or((0.0, 0.0));
            let meta = FactorMeta {
                method: f.method,
                q: f.rank(),
                a,
                b,
                objective: f.objective_history.last().copied(),
                objective_history: f.objective_history.clone(),
                iterations: f.iterations,
                singular_values: f.singular_values.clone(),
                reconstruction_error: f.reconstruction_error,
                seed,
            };
            write_json(&dir.join("factor_meta.json"), &meta)?;
            write_gp(dir, &emu.gp)
        }
        Trained::Mem(mem) => write_mem(dir, name, mem, None, proxies),
        Trained::Warped(w) => write_mem(dir, name, &w.mem, Some(w), proxies),
    }
}

fn write_mem(dir: &Path, name: &str, mem: &MemEmulator, warped: Option<&WarpedMem>, proxies: &[ProxyRecord]) -> Result<()> {
    write_json(&dir.join("emulator_meta.json"), &EmulatorMeta::Mem { name: name.to_string(), warped: warped.is_some() })?;
    let map = match &mem.prior.map {
        ParamMap::NonlinearDs { system } => MapMeta::NonlinearDs { system: *system },
        ParamMap::ReservoirEquilibrium { exponent, coefficient, area } => {
            MapMeta::ReservoirEquilibrium { exponent: *exponent, coefficient: *coefficient, area: *area }
        }
        ParamMap::Learned { order, gp } => {
            let sub = dir.join("map");
            std::fs::create_dir_all(&sub)?;
            write_gp(&sub, gp)?;
            MapMeta::Learned { order: *order }
        }
    };
    if let Some(wm) = warped.and_then(|w| w.warp_map.as_ref()) {
        let sub = dir.join("warp_map");
        std::fs::create_dir_all(&sub)?;
        write_gp(&sub, wm)?;
    }
    let meta = MemMeta {
        template: mem.prior.template.clone(),
        coupling: mem.prior.coupling.clone(),
        map,
        warps: warped.map(|w| w.warps.clone()),
        train_times: mem.train_times.clone(),
        kappa: mem.kappa(),
        jitter: mem.jitter(),
    };
    write_json(&dir.join("mem_meta.json"), &meta)?;
    let alpha = mem.alpha().cloned().unwrap_or_else(|| DVector::zeros(0));
    write_table(&dir.join("gp_alpha.csv"), &["alpha".to_string()], alpha.iter().map(|&a| vec![a]))?;
    let dim = mem.thetas.first().map_or(0, Vec::len);
    write_table(&dir.join("gp_train_inputs.csv"), &numbered("theta", dim), mem.thetas.iter().cloned())?;
    if !proxies.is_empty() {
        let (np, nq) = (proxies[0].theta.len(), proxies[0].psi.len());
        let mut header = numbered("theta", np);
        header.extend(numbered("psi", nq));
        header.push("residual".into());
        let rows = proxies.iter().map(|p| {
            let mut r = p.theta.clone();
            r.extend(&p.psi);
            r.push(p.residual);
            r
        });
        write_table(&dir.join("proxies.csv"), &header, rows)?;
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<(EmulatorMeta, Trained)> {
    if !dir.is_dir() {
        bail!("emulator bundle {} does not exist", dir.display());
    }
    let meta: EmulatorMeta = read_json(&dir.join("emulator_meta.json"))?;
    let trained = match &meta {
        EmulatorMeta::DataDriven { method, q, clip_negative, grid_hash: hash, .. } => {
            let times = read_times(&dir.join("times.csv"))?;
            if &grid_hash(&times) != hash {
                bail!("{}: times.csv does not match the recorded grid hash", dir.display());
            }
            let (_, basis) = read_matrix(&dir.join("basis.csv"))?;
            let (_, coeffs) = read_matrix(&dir.join("coeffs.csv"))?;
            let fm: FactorMeta = read_json(&dir.join("factor_meta.json"))?;
            if basis.ncols() != *q || coeffs.nrows() != *q || basis.nrows() != times.len() {
                bail!("{}: basis/coefficient shapes do not match q = {q}", dir.display());
            }
            let factor = FactorModel {
                basis,
                coeffs,
                method: *method,
                nmf_weights: (*method == FactorMethod::Nmf).then_some((fm.a, fm.b)),
                singular_values: fm.singular_values,
                objective_history: fm.objective_history,
                iterations: fm.iterations,
                reconstruction_error: fm.reconstruction_error,
            };
            let gp = read_gp(dir)?;
            Trained::DataDriven(DataDrivenEmulator { factor, gp, times, clip_negative: *clip_negative })
        }
        EmulatorMeta::Mem { warped, .. } => {
            let mm: MemMeta = read_json(&dir.join("mem_meta.json"))?;
            let map = match mm.map {
                MapMeta::NonlinearDs { system } => ParamMap::NonlinearDs { system },
                MapMeta::ReservoirEquilibrium { exponent, coefficient, area } => {
                    ParamMap::ReservoirEquilibrium { exponent, coefficient, area }
                }
                MapMeta::Learned { order } => ParamMap::Learned { order, gp: read_gp(&dir.join("map"))? },
            };
            let prior = MemPrior { template: mm.template, coupling: mm.coupling, map };
            let (_, alpha) = read_table(&dir.join("gp_alpha.csv"))?;
            let (_, thetas) = read_table(&dir.join("gp_train_inputs.csv"))?;
            let alpha = DVector::from_iterator(alpha.len(), alpha.into_iter().map(|r| r[0]));
            let mem = MemEmulator::from_parts(prior, thetas, mm.train_times, alpha, mm.kappa, mm.jitter)
                .with_context(|| format!("rebuilding the MEM in {}", dir.display()))?;
            if *warped {
                let warps = mm.warps.context("warped bundle without warps")?;
                let wm = dir.join("warp_map");
                let warp_map = if wm.is_dir() { Some(read_gp(&wm)?) } else { None };
                Trained::Warped(WarpedMem { mem, warps, warp_map })
            } else {
                Trained::Mem(mem)
            }
        }
    };
    Ok((meta, trained))
}

/// Prediction series for several parameter vectors: one column per θ.
pub fn predict_batch(emu: &Trained, thetas: &[Vec<f64>], times: &[f64]) -> Result<DMatrix<f64>> {
    use emulate_core::Emulator;
    let mut out = DMatrix::zeros(times.len(), thetas.len());
    for (j, th) in thetas.iter().enumerate() {
        let col = emu.predict(th, times).with_context(|| format!("predicting parameter set {}", j + 1))?;
        out.set_column(j, &DVector::from_vec(col));
    }
    Ok(out)
}
