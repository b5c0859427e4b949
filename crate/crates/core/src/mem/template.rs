use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};

use super::lti::LtiProxy;
use crate::dataset::{generate_block_rain, RainEvent, TimeGrid};
use crate::linalg::lstsq;
use crate::optim::NelderMead;
use crate::signal::PiecewiseConstant;
use crate::{Error, Result};

/// What drives a proxy.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Actuation {
    /// `u ≡ gain`.
    Constant,
    /// `u = gain·R(t)` with `R` the block rain of `θ = [intensity, duration]`
    /// discretized on `grid`, as the toy catchment sees it.
    BlockRain { grid: TimeGrid, start: f64 },
    /// `u = gain·R(t)` with one fixed external series for every run.
    Signal { signal: PiecewiseConstant },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", content = "value", rename_all = "snake_case"))]
pub enum InitialState {
    Zero,
    /// The first mode starts at `θ[k]`.
    Param(usize),
    /// The first mode starts at this value.
    Value(f64),
}

/// Structure shared by every proxy of an emulator: `order` parallel
/// first-order modes `ds_k/dt = ψ_k s_k + ψ_{p+k} u(t)`, observed as their sum.
/// The proxy parameter vector is `ψ = [rates…, gains…]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProxyTemplate {
    pub order: usize,
    pub actuation: Actuation,
    pub initial: InitialState,
    /// `Σ0 = sigma0·I`.
    pub sigma0: f64,
    /// Returned for degenerate fits (all-zero data).
    pub default_rate: f64,
}

impl ProxyTemplate {
    pub fn first_order(actuation: Actuation, initial: InitialState) -> Self {
        Self { order: 1, actuation, initial, sigma0: 0.0, default_rate: -1.0 }
    }

    pub fn n_params(&self) -> usize {
        2 * self.order
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::config("proxy order must be at least 1"));
        }
        if !(self.sigma0 >= 0.0) {
            return Err(Error::config("initial-state variance must be >= 0"));
        }
        if !(self.default_rate < 0.0) {
            return Err(Error::config("default proxy rate must be negative"));
        }
        if let Actuation::BlockRain { grid, .. } = &self.actuation {
            grid.validate()?;
        }
        Ok(())
    }

    /// Unit-gain actuation signal for the run with parameters `theta`.
    pub fn signal(&self, theta: &[f64]) -> Result<PiecewiseConstant> {
        match &self.actuation {
            Actuation::Constant => Ok(PiecewiseConstant::constant(1.0)),
            Actuation::Signal { signal } => Ok(signal.clone()),
            Actuation::BlockRain { grid, start } => {
                if theta.len() < 2 {
                    return Err(Error::DimensionMismatch { what: "block-rain parameters", expected: 2, got: theta.len() });
                }
                let event = RainEvent { intensity: theta[0], duration: theta[1], start: *start };
                Ok(generate_block_rain(&event, grid)?.as_signal(grid))
            }
        }
    }

    pub fn initial_value(&self, theta: &[f64]) -> Result<f64> {
        match self.initial {
            InitialState::Zero => Ok(0.0),
            InitialState::Value(v) => Ok(v),
            InitialState::Param(k) => theta
                .get(k)
                .copied()
                .ok_or(Error::DimensionMismatch { what: "initial-state parameter", expected: k + 1, got: theta.len() }),
        }
    }

    pub fn build(&self, psi: &[f64], theta: &[f64]) -> Result<LtiProxy> {
        let signal = self.signal(theta)?;
        self.build_with_signal(psi, theta, signal)
    }

    pub(crate) fn build_with_signal(&self, psi: &[f64], theta: &[f64], signal: PiecewiseConstant) -> Result<LtiProxy> {
        crate::error::check_len("proxy parameters", self.n_params(), psi.len())?;
        let p = self.order;
        let mut s0 = DVector::zeros(p);
        s0[0] = self.initial_value(theta)?;
        LtiProxy::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(&psi[..p])),
            DVector::from_column_slice(&psi[p..]),
            DVector::zeros(p),
            signal,
            DVector::from_element(p, 1.0),
            s0,
            DMatrix::identity(p, p) * self.sigma0,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitConfig {
    /// Log-spaced deterministic starting rates per mode.
    pub starts: usize,
    /// Extra uniformly drawn starts (log-rate space), seeded.
    pub random_starts: usize,
    pub seed: u64,
    pub max_evals: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { starts: 6, random_starts: 2, seed: 0, max_evals: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProxyFit {
    pub psi: Vec<f64>,
    /// Residual sum of squares.
    pub residual: f64,
    /// Set when the data carry no information about the rates (all zero).
    pub degenerate: bool,
}

/// Least-squares fit of the proxy parameters to one training column.
///
/// Rates are searched as `log(−rate)` with Nelder–Mead from several starts;
/// for fixed rates the output is linear in the gains, which are solved for
/// exactly (variable projection).
pub fn fit_proxy(y: &[f64], times: &[f64], template: &ProxyTemplate, theta: &[f64], config: &FitConfig) -> Result<ProxyFit> {
    template.validate()?;
    crate::error::check_len("proxy fit data", times.len(), y.len())?;
    crate::error::check_finite("proxy fit data", y)?;
    if times.is_empty() {
        return Err(Error::config("proxy fit needs at least one sample"));
    }
    let p = template.order;
    let signal = template.signal(theta)?;
    let s0 = template.initial_value(theta)?;

    if y.iter().all(|&v| v == 0.0) && s0 == 0.0 {
        let mut psi = alloc::vec![template.default_rate; p];
        psi.extend(core::iter::repeat_n(0.0, p));
        return Ok(ProxyFit { psi, residual: 0.0, degenerate: true });
    }

    let span = times.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let solve_gains = |log_rates: &[f64]| -> Option<(Vec<f64>, f64)> {
        let rates: Vec<f64> = log_rates.iter().map(|r| -r.exp()).collect();
        if rates.iter().any(|r| !r.is_finite() || *r == 0.0) {
            return None;
        }
        // homogeneous response of the first mode plus unit-gain forced responses
        let free = LtiProxy::scalar(rates[0], 0.0, PiecewiseConstant::zero(), s0, 0.0).ok()?;
        let base = free.mean_series(times).ok()?;
        let mut design = DMatrix::zeros(times.len(), p);
        for (k, &rate) in rates.iter().enumerate() {
            let unit = LtiProxy::scalar(rate, 1.0, signal.clone(), 0.0, 0.0).ok()?;
            let col = unit.mean_series(times).ok()?;
            design.set_column(k, &DVector::from_vec(col));
        }
        let target = DVector::from_iterator(y.len(), y.iter().zip(&base).map(|(v, b)| v - b));
        let gains = lstsq(&design, &target);
        let resid = (&design * &gains - &target).norm_squared();
        resid.is_finite().then(|| (gains.iter().copied().collect(), resid))
    };

    let lo = (1e-2 / span).ln();
    let hi = (1e3 / span).ln();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let n = config.starts.max(1);
    for i in 0..n {
        let base = if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
        // spread additional modes one decade apart
        starts.push((0..p).map(|k| base + k as f64 * core::f64::consts::LN_10).collect());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.random_starts {
        starts.push((0..p).map(|_| rng.random_range(lo..hi)).collect());
    }

    let nm = NelderMead { max_evals: config.max_evals, xtol: 1e-10, ftol: 0.0 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let m = nm.minimize(|x| solve_gains(x).map_or(f64::INFINITY, |(_, r)| r), s, &alloc::vec![0.5; p]);
        if m.value.is_finite() && best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (log_rates, _) = best.ok_or_else(|| Error::Numerical("every proxy-fit start diverged".into()))?;
    let (gains, residual) = solve_gains(&log_rates).ok_or_else(|| Error::Numerical("proxy fit diverged".into()))?;
    let mut psi: Vec<f64> = log_rates.iter().map(|r| -r.exp()).collect();
    psi.extend(gains);
    Ok(ProxyFit { psi, residual, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NonlinearDs;
    use alloc::vec;

    #[test]
    fn recovers_generating_parameters() {
        let tpl = ProxyTemplate::first_order(Actuation::Constant, InitialState::Zero);
        let times: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let truth = tpl.build(&[-2.0, 3.0], &[]).unwrap().mean_series(&times).unwrap();
        let fit = fit_proxy(&truth, &times, &tpl, &[], &FitConfig::default()).unwrap();
        assert!((fit.psi[0] + 2.0).abs() < 2e-4 && (fit.psi[1] - 3.0).abs() < 3e-4, "{:?}", fit.psi);
    }

    #[test]
    fn block_rain_proxy_recovered() {
        let grid = TimeGrid { start: 0.0, step: 1.0, len: 200 };
        let tpl = ProxyTemplate::first_order(Actuation::BlockRain { grid, start: 0.0 }, InitialState::Zero);
        let theta = [40.0, 30.0];
        let times = grid.times();
        let truth = tpl.build(&[-0.05, 0.04], &theta).unwrap().mean_series(&times).unwrap();
        let fit = fit_proxy(&truth, &times, &tpl, &theta, &FitConfig::default()).unwrap();
        assert!((fit.psi[0] / -0.05 - 1.0).abs() < 1e-4 && (fit.psi[1] / 0.04 - 1.0).abs() < 1e-4, "{:?}", fit.psi);
    }

    #[test]
    fn zero_data_is_degenerate() {
        let tpl = ProxyTemplate::first_order(Actuation::Constant, InitialState::Zero);
        let fit = fit_proxy(&[0.0; 5], &[0.0, 1.0, 2.0, 3.0, 4.0], &tpl, &[], &FitConfig::default()).unwrap();
        assert!(fit.degenerate && fit.residual == 0.0);
        assert_eq!(fit.psi, vec![-1.0, 0.0]);
    }

    #[test]
    fn nonlinear_ds_column_matches_closed_form_coefficients() {
        let sys = NonlinearDs::default();
        let tpl = ProxyTemplate::first_order(Actuation::Constant, InitialState::Param(0));
        let times: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        for x0 in [-0.8, -0.3, 0.45, 1.0] {
            let y: Vec<f64> = times.iter().map(|&t| sys.trajectory(x0, t)).collect();
            let fit = fit_proxy(&y, &times, &tpl, &[x0], &FitConfig::default()).unwrap();
            assert!((fit.psi[0] / sys.rate(x0) - 1.0).abs() < 1e-3, "x0={x0}: {:?}", fit.psi);
            assert!((fit.psi[1] / sys.gain(x0) - 1.0).abs() < 1e-3, "x0={x0}: {:?}", fit.psi);
        }
    }

    #[test]
    fn second_order_fit_improves_residual() {
        let times: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = times.iter().map(|&t| 2.0 * (1.0 - (-0.5 * t).exp()) + (1.0 - (-4.0 * t).exp())).collect();
        let one = fit_proxy(&y, &times, &ProxyTemplate::first_order(Actuation::Constant, InitialState::Zero), &[], &FitConfig::default()).unwrap();
        let tpl2 = ProxyTemplate { order: 2, ..ProxyTemplate::first_order(Actuation::Constant, InitialState::Zero) };
        let two = fit_proxy(&y, &times, &tpl2, &[], &FitConfig::default()).unwrap();
        assert!(two.residual < 1e-10 && two.residual < one.residual);
    }
}
