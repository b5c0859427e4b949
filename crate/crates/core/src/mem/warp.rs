use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use super::emulator::{condition_mem, Coupling, MemEmulator, MemPrior};
use super::lti::LtiProxy;
use super::param_map::build_param_map;
use super::template::{fit_proxy, FitConfig, ProxyTemplate};
use crate::gp::{GpConfig, GpRegression};
use crate::optim::NelderMead;
use crate::{Emulator, Error, Result};

/// Output nonlinearity `y = a·tanh(b·h + c)` with `a > 0`, or the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case"))]
pub enum WarpSpec {
    Identity,
    Tanh { a: f64, b: f64, c: f64 },
}

impl WarpSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WarpSpec::Identity => Ok(()),
            WarpSpec::Tanh { a, b, c } => {
                if !(a > 0.0 && a.is_finite() && b.is_finite() && c.is_finite()) || b.abs() < 1e-8 {
                    Err(Error::config("tanh warp needs a > 0 and |b| >= 1e-8"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn apply(&self, h: f64) -> f64 {
        match *self {
            WarpSpec::Identity => h,
            WarpSpec::Tanh { a, b, c } => a * (b * h + c).tanh(),
        }
    }

    /// Inverse warp; outside `(−a, a)` the argument is clamped just inside the
    /// range so the result stays finite.
    pub fn invert(&self, y: f64) -> f64 {
        match *self {
            WarpSpec::Identity => y,
            WarpSpec::Tanh { a, b, c } => {
                let limit = 1.0 - 1e-15;
                let u = (y / a).clamp(-limit, limit);
                (u.atanh() - c) / b
            }
        }
    }

    /// True if `invert` is exact at `y`.
    pub fn in_range(&self, y: f64) -> bool {
        match *self {
            WarpSpec::Identity => true,
            WarpSpec::Tanh { a, .. } => y.abs() < a,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpFit {
    pub warp: WarpSpec,
    /// Proxy parameters fitted to the unwarped column.
    pub psi: Vec<f64>,
    /// Sum of squared errors of `warp(proxy)` against the data.
    pub residual: f64,
    /// Set when the fit fell back to the identity warp.
    pub identity_fallback: bool,
}

const WARP_ROUNDS: usize = 10;

/// Joint least-squares fit of a tanh warp and the run's linear proxy by
/// alternating minimization: fit the proxy to `warp⁻¹(y)`, then the warp to
/// the proxy output. The best round (in data space) is kept.
pub fn warp_fit(y: &[f64], times: &[f64], template: &ProxyTemplate, theta: &[f64], config: &FitConfig) -> Result<WarpFit> {
    crate::error::check_finite("warp data", y)?;
    crate::error::check_len("warp data", times.len(), y.len())?;
    let identity = |config: &FitConfig| -> Result<WarpFit> {
        let fit = fit_proxy(y, times, template, theta, config)?;
        Ok(WarpFit { warp: WarpSpec::Identity, psi: fit.psi, residual: fit.residual, identity_fallback: true })
    };
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if y.is_empty() || hi - lo == 0.0 {
        return identity(config);
    }
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut warp = WarpSpec::Tanh { a: 2.0 * ymax, b: 1.0 / (2.0 * ymax), c: 0.0 };
    let sse = |w: &WarpSpec, z: &[f64]| y.iter().zip(z).map(|(v, h)| (v - w.apply(*h)).powi(2)).sum::<f64>();
    let nm = NelderMead { max_evals: 3000, xtol: 1e-12, ftol: 0.0 };
    let mut best: Option<(WarpSpec, Vec<f64>, f64)> = None;

    for _ in 0..WARP_ROUNDS {
        let h: Vec<f64> = y.iter().map(|&v| warp.invert(v)).collect();
        let fit = fit_proxy(&h, times, template, theta, config)?;
        let z = template.build(&fit.psi, theta)?.mean_series(times)?;
        let WarpSpec::Tanh { a, b, c } = warp else { unreachable!() };
        // search over (log a, b, c), rejecting warps whose inverse would not cover the data
        let m = nm.minimize(
            |p| {
                let w = WarpSpec::Tanh { a: p[0].exp(), b: p[1], c: p[2] };
                if p[0].exp() <= ymax || p[1].abs() < 1e-8 {
                    return f64::INFINITY;
                }
                sse(&w, &z)
            },
            &[a.ln(), b, c],
            &[0.1, 0.1 * b.abs().max(1e-6), 0.1],
        );
        if m.value.is_finite() {
            warp = WarpSpec::Tanh { a: m.x[0].exp(), b: m.x[1], c: m.x[2] };
        }
        let err = sse(&warp, &z);
        if best.as_ref().is_none_or(|(_, _, e)| err < *e) {
            best = Some((warp, fit.psi, err));
        }
    }
    let (warp, psi, residual) = best.expect("at least one round");
    if warp.validate().is_err() {
        return identity(config);
    }
    Ok(WarpFit { warp, psi, residual, identity_fallback: false })
}

/// A mechanistic emulator trained on unwarped outputs `warp_i⁻¹(y_i)`,
/// with the warp parameters interpolated over `θ` at prediction time.
#[derive(Clone, Debug)]
pub struct WarpedMem {
    pub mem: MemEmulator,
    pub warps: Vec<WarpSpec>,
    /// GP over `θ` of `(log a, b, c)` fitted on the non-identity runs.
    pub warp_map: Option<GpRegression>,
}

impl WarpedMem {
    pub fn warp_at(&self, theta: &[f64]) -> Result<WarpSpec> {
        match &self.warp_map {
            None => Ok(WarpSpec::Identity),
            Some(gp) => {
                let p = gp.predict(theta)?;
                let w = WarpSpec::Tanh { a: p[0].exp(), b: p[1], c: p[2] };
                Ok(if w.validate().is_ok() { w } else { WarpSpec::Identity })
            }
        }
    }
}

impl Emulator for WarpedMem {
    fn predict(&self, theta: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let warp = self.warp_at(theta)?;
        Ok(self.mem.predict(theta, times)?.into_iter().map(|h| warp.apply(h)).collect())
    }
}

/// Per-run warp and proxy fits, a learned proxy map, and a MEM on the
/// unwarped training columns.
pub fn train_warped_mem(
    template: &ProxyTemplate,
    coupling: Coupling,
    thetas: &[Vec<f64>],
    times: &[f64],
    outputs: &DMatrix<f64>,
    fit: &FitConfig,
    gp: &GpConfig,
    kappa: f64,
) -> Result<(WarpedMem, Vec<WarpFit>)> {
    crate::error::check_len("training runs", outputs.ncols(), thetas.len())?;
    let fits = (0..thetas.len())
        .map(|j| {
            let col: Vec<f64> = outputs.column(j).iter().copied().collect();
            warp_fit(&col, times, template, &thetas[j], fit)
        })
        .collect::<Result<Vec<_>>>()?;
    let psis: Vec<Vec<f64>> = fits.iter().map(|f| f.psi.clone()).collect();
    let map = build_param_map(thetas, &psis, template.order, gp)?;
    let unwarped = DMatrix::from_fn(outputs.nrows(), outputs.ncols(), |i, j| fits[j].warp.invert(outputs[(i, j)]));

    let warped_runs: Vec<usize> = (0..fits.len()).filter(|&j| !fits[j].identity_fallback).collect();
    let warp_map = if warped_runs.len() >= 2 {
        let inputs: Vec<Vec<f64>> = warped_runs.iter().map(|&j| thetas[j].clone()).collect();
        let mut targets = alloc::vec![Vec::new(), Vec::new(), Vec::new()];
        for &j in &warped_runs {
            if let WarpSpec::Tanh { a, b, c } = fits[j].warp {
                targets[0].push(a.ln());
                targets[1].push(b);
                targets[2].push(c);
            }
        }
        Some(GpRegression::fit(&inputs, &targets, gp)?)
    } else {
        None
    };
    let prior = MemPrior { template: template.clone(), coupling, map };
    let mem = condition_mem(prior, thetas, times, &unwarped, kappa)?;
    let warps = fits.iter().map(|f| f.warp).collect();
    Ok((WarpedMem { mem, warps, warp_map }, fits))
}

/// Unwarped proxy output for diagnostics.
pub fn warped_proxy_series(proxy: &LtiProxy, warp: &WarpSpec, times: &[f64]) -> Result<Vec<f64>> {
    Ok(proxy.mean_series(times)?.into_iter().map(|h| warp.apply(h)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::{Actuation, InitialState};
    use proptest::prelude::*;

    #[test]
    fn unit_warp_round_trip() {
        let w = WarpSpec::Tanh { a: 1.0, b: 1.0, c: 0.0 };
        for h in [-2.0, -0.3, 0.0, 0.1, 1.5] {
            assert!((w.invert(w.apply(h)) - h).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_falls_back_to_identity() {
        let tpl = ProxyTemplate::first_order(Actuation::Constant, InitialState::Zero);
        let fit = warp_fit(&[0.3; 6], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &tpl, &[], &FitConfig::default()).unwrap();
        assert!(fit.identity_fallback && fit.warp == WarpSpec::Identity);
    }

    #[test]
    fn recovers_tanh_of_linear_response() {
        let tpl = ProxyTemplate::first_order(Actuation::Constant, InitialState::Zero);
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = times.iter().map(|&t| (2.0 * (1.0 - (-t).exp()) - 0.5).tanh()).collect();
        let fit = warp_fit(&y, &times, &tpl, &[], &FitConfig::default()).unwrap();
        assert!(!fit.identity_fallback);
        let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
        let rmse = (fit.residual / y.len() as f64).sqrt();
        assert!(rmse < 0.01 * range, "rmse {rmse}");
        let z = tpl.build(&fit.psi, &[]).unwrap();
        let rebuilt = warped_proxy_series(&z, &fit.warp, &times).unwrap();
        let direct: f64 = rebuilt.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((direct - fit.residual).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn invert_after_apply_is_identity(a in 0.1f64..10.0, b in 0.05f64..5.0, c in -1.0f64..1.0, u in -0.95f64..0.95) {
            let w = WarpSpec::Tanh { a, b, c };
            // h chosen so that the warped value stays well inside (−a, a)
            let h = (u.atanh() - c) / b;
            prop_assert!((w.invert(w.apply(h)) - h).abs() < 1e-10 * h.abs().max(1.0));
        }
    }
}
