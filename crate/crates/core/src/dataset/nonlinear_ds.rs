use alloc::string::ToString;
use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use super::TimeSeriesDataset;
use crate::linalg::{exprel, gauss_hermite};
use crate::{Error, Result};

/// The scalar linear system `dx/dt = a(x0)·x + b(x0)` whose coefficients
/// depend nonlinearly on the initial condition:
/// `a(x) = −a0·exp(−a1·(x − sign x)²)`, `b(x) = b0·tanh x`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NonlinearDs {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
}

impl Default for NonlinearDs {
    fn default() -> Self {
        Self { a0: 12.616, a1: 5.0, b0: 2.0 }
    }
}

impl NonlinearDs {
    /// Decay rate. At `x = 0` the value is taken by continuity, i.e. the
    /// squared distance to the nearest of ±1 is 1.
    pub fn rate(&self, x: f64) -> f64 {
        let shift = if x >= 0.0 { 1.0 } else { -1.0 };
        let d = x - shift;
        -self.a0 * (-self.a1 * d * d).exp()
    }

    pub fn gain(&self, x: f64) -> f64 {
        self.b0 * x.tanh()
    }

    /// Closed-form solution `x0·e^{at} + b·(e^{at} − 1)/a`.
    pub fn trajectory(&self, x0: f64, t: f64) -> f64 {
        let a = self.rate(x0);
        let b = self.gain(x0);
        let at = a * t;
        x0 * at.exp() + b * t * exprel(at)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NonlinearDsConfig {
    pub system: NonlinearDs,
    pub n_runs: usize,
    pub x0_range: (f64, f64),
    pub n_times: usize,
    pub t_end: f64,
    /// 0 gives the unmixed dataset; > 0 averages neighbouring trajectories
    /// with a Gaussian of this standard deviation.
    pub smoothing_sigma: f64,
    pub quadrature_nodes: usize,
}

impl Default for NonlinearDsConfig {
    fn default() -> Self {
        Self {
            system: NonlinearDs::default(),
            n_runs: 200,
            x0_range: (-1.0, 1.0),
            n_times: 40,
            t_end: 1.0,
            smoothing_sigma: 0.0,
            quadrature_nodes: 41,
        }
    }
}

impl NonlinearDsConfig {
    /// One run of the generator at arbitrary times: the closed form, or its
    /// Gaussian mixture over neighbouring initial conditions.
    pub fn simulate(&self, x0: f64, times: &[f64]) -> Vec<f64> {
        let sys = self.system;
        if self.smoothing_sigma > 0.0 {
            let rule = mixing_rule(self.smoothing_sigma, self.quadrature_nodes);
            times.iter().map(|&t| rule.iter().map(|(shift, w)| w * sys.trajectory(x0 + shift, t)).sum()).collect()
        } else {
            times.iter().map(|&t| sys.trajectory(x0, t)).collect()
        }
    }
}

/// Normalized weight below which a Gauss–Hermite node is dropped.
const NODE_WEIGHT_CUTOFF: f64 = 1e-12;

/// Generates the nonlinear dataset. Initial conditions are uniformly spaced
/// over `x0_range`, times uniformly over `[0, t_end]`.
pub fn generate_nonlinear_ds(config: &NonlinearDsConfig) -> Result<TimeSeriesDataset> {
    let sys = config.system;
    if !(sys.a0 > 0.0) {
        return Err(Error::config("a0 must be positive"));
    }
    if config.n_runs < 2 {
        return Err(Error::config("n_runs must be at least 2"));
    }
    if config.n_times < 2 || !(config.t_end > 0.0) {
        return Err(Error::config("need n_times >= 2 and t_end > 0"));
    }
    if !(config.smoothing_sigma >= 0.0) {
        return Err(Error::config("smoothing sigma must be nonnegative"));
    }
    let (lo, hi) = config.x0_range;
    if !(hi > lo) {
        return Err(Error::config("x0_range must be a nonempty interval"));
    }

    let times: Vec<f64> = (0..config.n_times)
        .map(|i| config.t_end * i as f64 / (config.n_times - 1) as f64)
        .collect();
    let x0s: Vec<f64> = (0..config.n_runs)
        .map(|j| lo + (hi - lo) * j as f64 / (config.n_runs - 1) as f64)
        .collect();

    let sigma = config.smoothing_sigma;
    let mixing = if sigma > 0.0 { Some(mixing_rule(sigma, config.quadrature_nodes)) } else { None };

    let outputs = DMatrix::from_fn(times.len(), x0s.len(), |i, j| {
        let (t, x0) = (times[i], x0s[j]);
        match &mixing {
            None => sys.trajectory(x0, t),
            Some(rule) => rule.iter().map(|(shift, w)| w * sys.trajectory(x0 + shift, t)).sum(),
        }
    });

    let params = x0s.iter().map(|&x| alloc::vec![x]).collect();
    let mut ds = TimeSeriesDataset::new(times, outputs, params, alloc::vec!["x0".to_string()])?;
    ds.metadata.insert("generator".into(), "nonlinear_ds".into());
    ds.metadata.insert("x0_spacing".into(), "uniform".into());
    ds.metadata.insert("smoothing_sigma".into(), alloc::format!("{sigma:e}"));
    if let Some(rule) = &mixing {
        ds.metadata.insert("quadrature".into(), "gauss-hermite".into());
        ds.metadata.insert("quadrature_nodes".into(), alloc::format!("{}", rule.len()));
    }
    Ok(ds)
}

/// Shifts and normalized weights approximating `∫ f(x0 + α) N(α; 0, σ²) dα`.
fn mixing_rule(sigma: f64, nodes: usize) -> Vec<(f64, f64)> {
    let rule = gauss_hermite(nodes);
    let norm = core::f64::consts::PI.sqrt();
    let kept: Vec<(f64, f64)> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| (core::f64::consts::SQRT_2 * sigma * x, w / norm))
        .filter(|(_, w)| *w >= NODE_WEIGHT_CUTOFF)
        .collect();
    let total: f64 = kept.iter().map(|p| p.1).sum();
    kept.into_iter().map(|(s, w)| (s, w / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classic fixed-step RK4 with many steps, independent of the closed form.
    fn rk4(sys: &NonlinearDs, x0: f64, t: f64, steps: usize) -> f64 {
        let (a, b) = (sys.rate(x0), sys.gain(x0));
        let f = |x: f64| a * x + b;
        let h = t / steps as f64;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn rate_and_gain_examples() {
        let sys = NonlinearDs::default();
        assert_eq!(sys.rate(1.0), -12.616);
        assert!((sys.rate(0.0) - (-12.616 * (-5.0f64).exp())).abs() < 1e-15);
        assert_eq!(sys.gain(0.0), 0.0);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(sys.trajectory(0.0, t), 0.0);
        }
    }

    #[test]
    fn closed_form_at_x0_one() {
        let sys = NonlinearDs::default();
        let a = -12.616f64;
        let b = 2.0 * 1f64.tanh();
        let want = (1.0 + b / a) * (0.1 * a).exp() - b / a;
        let got = sys.trajectory(1.0, 0.1);
        assert!((got - want).abs() < 1e-14);
        // 0.4442... from the closed form; RK4 with 10^4 steps agrees.
        assert!((got - rk4(&sys, 1.0, 0.1, 10_000)).abs() < 1e-12);
    }

    #[test]
    fn dataset_shape_and_metadata() {
        let ds = generate_nonlinear_ds(&NonlinearDsConfig::default()).unwrap();
        assert_eq!((ds.n_times(), ds.n_runs()), (40, 200));
        assert_eq!(ds.params()[0], alloc::vec![-1.0]);
        assert_eq!(ds.params()[199], alloc::vec![1.0]);
        assert_eq!(ds.metadata["x0_spacing"], "uniform");
    }

    #[test]
    fn mixed_dataset_records_rule() {
        let cfg = NonlinearDsConfig { smoothing_sigma: 0.5, ..Default::default() };
        let ds = generate_nonlinear_ds(&cfg).unwrap();
        assert_eq!(ds.metadata["quadrature"], "gauss-hermite");
        let kept: usize = ds.metadata["quadrature_nodes"].parse().unwrap();
        assert!(kept > 20 && kept <= 41);
        // t = 0 row is the mean of x0 + α, which is x0
        for j in 0..ds.n_runs() {
            assert!((ds.outputs()[(0, j)] - ds.params()[j][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_run_simulation_matches_dataset_columns() {
        for sigma in [0.0, 0.5] {
            let cfg = NonlinearDsConfig { smoothing_sigma: sigma, n_runs: 11, ..Default::default() };
            let ds = generate_nonlinear_ds(&cfg).unwrap();
            for j in [0, 4, 10] {
                assert_eq!(cfg.simulate(ds.params()[j][0], ds.times()), ds.column(j));
            }
        }
    }

    #[test]
    fn rejects_negative_sigma() {
        let cfg = NonlinearDsConfig { smoothing_sigma: -0.1, ..Default::default() };
        assert!(matches!(generate_nonlinear_ds(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn tiny_sigma_converges_to_unmixed() {
        let base = generate_nonlinear_ds(&NonlinearDsConfig::default()).unwrap();
        let cfg = NonlinearDsConfig { smoothing_sigma: 1e-6, ..Default::default() };
        let mixed = generate_nonlinear_ds(&cfg).unwrap();
        let diff = (base.outputs() - mixed.outputs()).amax();
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn closed_form_matches_numeric_integration_on_grid() {
        let sys = NonlinearDs::default();
        let ds = generate_nonlinear_ds(&NonlinearDsConfig::default()).unwrap();
        for j in (0..200).step_by(7) {
            let x0 = ds.params()[j][0];
            for (i, &t) in ds.times().iter().enumerate().step_by(5) {
                let reference = rk4(&sys, x0, t, 4000);
                assert!((ds.outputs()[(i, j)] - reference).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mixed_surface_is_smooth_in_x0() {
        let cfg = NonlinearDsConfig { smoothing_sigma: 0.5, n_runs: 401, ..Default::default() };
        let ds = generate_nonlinear_ds(&cfg).unwrap();
        let h = 2.0 / 400.0;
        let y = ds.outputs();
        let mut max_second = 0.0f64;
        for i in 0..ds.n_times() {
            for j in 1..400 {
                let d2 = (y[(i, j + 1)] - 2.0 * y[(i, j)] + y[(i, j - 1)]) / (h * h);
                max_second = max_second.max(d2.abs());
            }
        }
        // the unmixed surface has kinks at x0 = 0 that blow this up as h -> 0
        assert!(max_second < 50.0, "{max_second}");
    }
}
