use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::dataset::NonlinearDs;
use crate::gp::{GpConfig, GpRegression};
use crate::{Error, Result};

/// Map from simulator parameters `θ` to proxy parameters `ψ = [rates…, gains…]`.
#[derive(Clone, Debug)]
pub enum ParamMap {
    /// `θ = [x0]`, `ψ = (a(x0), b(x0))` of the nonlinear scalar system.
    NonlinearDs { system: NonlinearDs },
    /// Linearization of the nonlinear reservoir `dS/dt = R − k·S^m` around the
    /// equilibrium storage of the rain intensity `θ[0]`:
    /// `λ = m·k^{1/m}·I^{(m−1)/m}` per hour, `ψ = (−λ/60, λ·area/60)` per minute.
    ReservoirEquilibrium { exponent: f64, coefficient: f64, area: f64 },
    /// GP interpolation of fitted pairs. Rates are interpolated as `log(−rate)`.
    Learned { order: usize, gp: GpRegression },
}

impl ParamMap {
    pub fn is_exact(&self) -> bool {
        !matches!(self, ParamMap::Learned { .. })
    }

    pub fn n_params(&self) -> usize {
        match self {
            ParamMap::Learned { order, .. } => 2 * order,
            _ => 2,
        }
    }

    pub fn map(&self, theta: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_finite("simulator parameters", theta)?;
        match self {
            ParamMap::NonlinearDs { system } => {
                crate::error::check_len("nonlinear-system parameters", 1, theta.len())?;
                Ok(alloc::vec![system.rate(theta[0]), system.gain(theta[0])])
            }
            ParamMap::ReservoirEquilibrium { exponent: m, coefficient: k, area } => {
                if theta.is_empty() || !(theta[0] > 0.0) {
                    return Err(Error::config("equilibrium mapping needs a positive rain intensity"));
                }
                let lambda = m * k.powf(1.0 / m) * theta[0].powf((m - 1.0) / m);
                Ok(alloc::vec![-lambda / 60.0, lambda * area / 60.0])
            }
            ParamMap::Learned { order, gp } => {
                let mut psi = gp.predict(theta)?;
                for v in psi.iter_mut().take(*order) {
                    *v = -v.exp();
                }
                Ok(psi)
            }
        }
    }
}

/// Fits one GP per proxy-parameter component over `θ`.
pub fn build_param_map(thetas: &[Vec<f64>], psis: &[Vec<f64>], order: usize, config: &GpConfig) -> Result<ParamMap> {
    crate::error::check_len("parameter pairs", thetas.len(), psis.len())?;
    if thetas.len() < 2 {
        return Err(Error::config("a learned parameter map needs at least two pairs"));
    }
    for psi in psis {
        crate::error::check_len("proxy parameters", 2 * order, psi.len())?;
        if psi[..order].iter().any(|r| !(*r < 0.0)) {
            return Err(Error::config("learned maps need strictly negative rates"));
        }
    }
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            if thetas[i] == thetas[j] && psis[i] != psis[j] {
                return Err(Error::ConflictingParams(i, j));
            }
        }
    }
    let targets: Vec<Vec<f64>> = (0..2 * order)
        .map(|k| psis.iter().map(|p| if k < order { (-p[k]).ln() } else { p[k] }).collect())
        .collect();
    Ok(ParamMap::Learned { order, gp: GpRegression::fit(thetas, &targets, config)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn exact_nonlinear_ds_at_one() {
        let map = ParamMap::NonlinearDs { system: NonlinearDs::default() };
        let psi = map.map(&[1.0]).unwrap();
        assert_eq!(psi[0], -12.616);
        assert!((psi[1] - 2.0 * 1.0f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_linear_reservoir_is_k() {
        // m = 1: the reservoir is linear and λ = k independent of intensity
        let map = ParamMap::ReservoirEquilibrium { exponent: 1.0, coefficient: 0.8, area: 2.0 };
        let psi = map.map(&[37.0, 10.0]).unwrap();
        assert!((psi[0] + 0.8 / 60.0).abs() < 1e-15 && (psi[1] - 1.6 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn learned_map_interpolates_training_pairs() {
        let thetas: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.2]).collect();
        let psis: Vec<Vec<f64>> = thetas.iter().map(|t| vec![-1.0 - t[0], 2.0 * t[0] + 0.5]).collect();
        let map = build_param_map(&thetas, &psis, 1, &GpConfig::default()).unwrap();
        for (t, p) in thetas.iter().zip(&psis) {
            let got = map.map(t).unwrap();
            assert!((got[0] - p[0]).abs() < 1e-6 && (got[1] - p[1]).abs() < 1e-6);
        }
        let mid = map.map(&[0.5]).unwrap();
        assert!((mid[1] - 1.5).abs() < 0.05 * 1.5);
        assert!((mid[0] + 1.5).abs() < 0.05 * 1.5);
    }

    #[test]
    fn conflicting_duplicates_rejected() {
        let thetas = vec![vec![0.0], vec![1.0], vec![0.0]];
        let psis = vec![vec![-1.0, 0.0], vec![-2.0, 1.0], vec![-3.0, 0.0]];
        let err = build_param_map(&thetas, &psis, 1, &GpConfig::default()).unwrap_err();
        assert_eq!(err, Error::ConflictingParams(0, 2));
    }
}
