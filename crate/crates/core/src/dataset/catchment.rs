use alloc::string::ToString;
use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use super::rain::{generate_block_rain, RainEvent, TimeGrid};
use super::TimeSeriesDataset;
use crate::{Error, Result};

/// Nonlinear reservoir `dS/dt = R(t) − k·S^m`, outflow `y = area·k·S^m`.
///
/// Time on the grid is in minutes, rain and outflow in mm/h, storage in mm,
/// `k` in mm^(1−m)/h.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyCatchmentConfig {
    pub exponent: f64,
    pub coefficient: f64,
    pub area: f64,
    pub grid: TimeGrid,
    pub initial_storage: f64,
    /// RK4 steps per grid cell.
    pub substeps: usize,
}

impl Default for ToyCatchmentConfig {
    fn default() -> Self {
        Self {
            exponent: 5.0 / 3.0,
            coefficient: 0.05,
            area: 1.0,
            grid: TimeGrid { start: 0.0, step: 0.5, len: 2880 },
            initial_storage: 0.0,
            substeps: 1,
        }
    }
}

impl ToyCatchmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.exponent > 0.0 && self.coefficient > 0.0 && self.area > 0.0) {
            return Err(Error::config("catchment coefficients must be strictly positive"));
        }
        if !(self.initial_storage >= 0.0) || self.substeps == 0 {
            return Err(Error::config("initial storage must be >= 0 and substeps >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatchmentRun {
    pub outflow: Vec<f64>,
    pub storage: Vec<f64>,
    pub rain: Vec<f64>,
}

impl CatchmentRun {
    /// `(∫R − ∫y/area − ΔS) / ∫R` with the rain integrated per cell and the
    /// outflow by the trapezoid rule.
    pub fn mass_balance_residual(&self, config: &ToyCatchmentConfig) -> f64 {
        let dt = config.grid.step / 60.0;
        let n = self.outflow.len();
        let inflow: f64 = self.rain[..n - 1].iter().sum::<f64>() * dt;
        let outflow: f64 =
            self.outflow.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() * dt / config.area;
        let change = self.storage[n - 1] - self.storage[0];
        (inflow - outflow - change) / inflow
    }
}

/// Integrates the reservoir with fixed-step RK4, rain held constant per cell.
pub fn simulate_toy_catchment(config: &ToyCatchmentConfig, rain: &RainEvent) -> Result<CatchmentRun> {
    config.validate()?;
    let series = generate_block_rain(rain, &config.grid)?;
    simulate_with_rain(config, series.values)
}

/// Same as [`simulate_toy_catchment`] for an arbitrary per-cell rain series.
pub fn simulate_with_rain(config: &ToyCatchmentConfig, rain: Vec<f64>) -> Result<CatchmentRun> {
    config.validate()?;
    crate::error::check_len("rain series", config.grid.len, rain.len())?;
    if rain.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::config("rain must be finite and nonnegative"));
    }
    let (k, m) = (config.coefficient, config.exponent);
    let h = config.grid.step / 60.0 / config.substeps as f64;
    let release = |s: f64| if s > 0.0 { k * s.powf(m) } else { 0.0 };

    let n = config.grid.len;
    let mut storage = Vec::with_capacity(n);
    let mut outflow = Vec::with_capacity(n);
    let mut s = config.initial_storage;
    storage.push(s);
    outflow.push(config.area * release(s));
    for (cell, &r) in rain[..n - 1].iter().enumerate() {
        let f = |s: f64| r - release(s);
        for _ in 0..config.substeps {
            let k1 = f(s);
            let k2 = f(s + 0.5 * h * k1);
            let k3 = f(s + 0.5 * h * k2);
            let k4 = f(s + h * k3);
            s = (s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
        }
        if !s.is_finite() {
            return Err(Error::Numerical(alloc::format!(
                "non-finite storage after cell {cell} (rain {r} mm/h)"
            )));
        }
        storage.push(s);
        outflow.push(config.area * release(s));
    }
    Ok(CatchmentRun { outflow, storage, rain })
}

/// Full-factorial intensity × duration design of block rain events.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CatchmentDesign {
    pub intensity_range: (f64, f64),
    pub n_intensities: usize,
    pub duration_range: (f64, f64),
    pub n_durations: usize,
    pub start: f64,
}

impl Default for CatchmentDesign {
    fn default() -> Self {
        Self {
            intensity_range: (10.0, 100.0),
            n_intensities: 30,
            duration_range: (10.0, 240.0),
            n_durations: 30,
            start: 0.0,
        }
    }
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![range.0];
    }
    (0..n).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64).collect()
}

/// One run per (intensity, duration) pair; parameters are `[intensity, duration]`.
pub fn generate_catchment_dataset(
    config: &ToyCatchmentConfig,
    design: &CatchmentDesign,
) -> Result<TimeSeriesDataset> {
    config.validate()?;
    if design.n_intensities == 0 || design.n_durations == 0 {
        return Err(Error::config("catchment design needs at least one intensity and duration"));
    }
    let mut params = Vec::new();
    let mut columns = Vec::new();
    for &intensity in &linspace(design.intensity_range, design.n_intensities) {
        for &duration in &linspace(design.duration_range, design.n_durations) {
            let event = RainEvent { intensity, duration, start: design.start };
            columns.push(simulate_toy_catchment(config, &event)?.outflow);
            params.push(alloc::vec![intensity, duration]);
        }
    }
    let outputs = DMatrix::from_fn(config.grid.len, columns.len(), |i, j| columns[j][i]);
    let mut ds = TimeSeriesDataset::new(
        config.grid.times(),
        outputs,
        params,
        alloc::vec!["intensity".to_string(), "duration".to_string()],
    )?;
    ds.metadata.insert("generator".into(), "toy_catchment".into());
    ds.metadata.insert("integrator".into(), alloc::format!("rk4 x{}", config.substeps));
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_reservoir_without_rain_stays_empty() {
        let cfg = ToyCatchmentConfig::default();
        let run = simulate_with_rain(&cfg, alloc::vec![0.0; cfg.grid.len]).unwrap();
        assert!(run.outflow.iter().all(|&y| y == 0.0));
        let after_horizon = RainEvent { intensity: 10.0, duration: 10.0, start: 1.0e6 };
        let run = simulate_toy_catchment(&cfg, &after_horizon).unwrap();
        assert!(run.outflow.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn linear_reservoir_matches_exact_solution() {
        let cfg = ToyCatchmentConfig { exponent: 1.0, coefficient: 0.8, ..Default::default() };
        let ev = RainEvent { intensity: 30.0, duration: 45.0, start: 0.0 };
        let run = simulate_toy_catchment(&cfg, &ev).unwrap();
        let k = cfg.coefficient;
        let t_end = 45.0 / 60.0;
        let exact = |t: f64| {
            let s_end = 30.0 / k * (1.0 - (-k * t_end).exp());
            let s = if t <= t_end { 30.0 / k * (1.0 - (-k * t).exp()) } else { s_end * (-k * (t - t_end)).exp() };
            k * s
        };
        for (i, y) in run.outflow.iter().enumerate() {
            let want = exact(i as f64 * 0.5 / 60.0);
            assert!((y - want).abs() <= 1e-6 * want.abs().max(1e-300), "i={i}: {y} vs {want}");
        }
    }

    #[test]
    fn mass_balance_closes() {
        let cfg = ToyCatchmentConfig::default();
        for (i, d) in [(10.0, 10.0), (41.0, 20.0), (100.0, 240.0), (55.0, 127.0)] {
            let run = simulate_toy_catchment(&cfg, &RainEvent::new(i, d)).unwrap();
            let res = run.mass_balance_residual(&cfg);
            assert!(res.abs() < 1e-3, "({i}, {d}): {res}");
            assert!(run.outflow.iter().all(|&y| y >= 0.0));
        }
    }

    #[test]
    fn peak_is_monotone_in_intensity() {
        let cfg = ToyCatchmentConfig::default();
        let mut last = 0.0;
        for i in [10.0, 20.0, 41.0, 70.0, 100.0] {
            let run = simulate_toy_catchment(&cfg, &RainEvent::new(i, 60.0)).unwrap();
            let peak = run.outflow.iter().cloned().fold(0.0, f64::max);
            assert!(peak >= last);
            last = peak;
        }
    }

    #[test]
    fn design_size() {
        let cfg = ToyCatchmentConfig { grid: TimeGrid { start: 0.0, step: 1.0, len: 100 }, ..Default::default() };
        let design = CatchmentDesign { n_intensities: 3, n_durations: 4, ..Default::default() };
        let ds = generate_catchment_dataset(&cfg, &design).unwrap();
        assert_eq!(ds.n_runs(), 12);
        assert_eq!(ds.params()[5], alloc::vec![55.0, 10.0 + 230.0 / 3.0]);
    }
}
