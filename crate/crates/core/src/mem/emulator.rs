use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};

use super::lti::{sde_covariance, LtiProxy};
use super::param_map::ParamMap;
use super::template::ProxyTemplate;
use crate::gp::{condition, lml_from_gram, ConditionedGp, Kernel, KernelSpec, ZeroMean};
use crate::optim::NelderMead;
use crate::{Emulator, Error, Result};

/// Covariance of the driving noise between blocks: `coupling(θ_i, θ_j)·I`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Coupling {
    /// Independent blocks with noise variance `variance` each.
    Uncoupled { variance: f64 },
    /// A kernel over raw simulator parameters.
    Kernel { kernel: KernelSpec },
}

impl Coupling {
    pub fn value(&self, a: &[f64], b: &[f64], same_block: bool) -> f64 {
        match self {
            Coupling::Uncoupled { variance } => {
                if same_block {
                    *variance
                } else {
                    0.0
                }
            }
            Coupling::Kernel { kernel } => kernel.k(a, b),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Coupling::Uncoupled { variance } if !(*variance >= 0.0 && variance.is_finite()) => {
                Err(Error::config("coupling variance must be finite and >= 0"))
            }
            Coupling::Kernel { kernel } => kernel.validate(),
            _ => Ok(()),
        }
    }
}

/// Prior of the mechanistic emulator: one proxy block per run, built from
/// the template with `ψ = map(θ)`, coupled through `coupling`.
#[derive(Clone, Debug)]
pub struct MemPrior {
    pub template: ProxyTemplate,
    pub coupling: Coupling,
    pub map: ParamMap,
}

impl MemPrior {
    pub fn proxy(&self, theta: &[f64]) -> Result<LtiProxy> {
        let psi = self.map.map(theta)?;
        self.template.build(&psi, theta)
    }
}

/// A training observation: block (run) index and time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemPoint {
    pub block: usize,
    pub t: f64,
}

/// The stochastic-ODE covariance over all training blocks.
#[derive(Clone, Debug)]
pub struct BlockKernel {
    pub proxies: Vec<LtiProxy>,
    pub thetas: Vec<Vec<f64>>,
    pub coupling: Coupling,
}

impl Kernel<MemPoint> for BlockKernel {
    fn eval(&self, a: &MemPoint, b: &MemPoint) -> f64 {
        let same = a.block == b.block;
        let c = self.coupling.value(&self.thetas[a.block], &self.thetas[b.block], same);
        sde_covariance(&self.proxies[a.block], &self.proxies[b.block], a.t, b.t, c, same).unwrap_or(f64::NAN)
    }
}

/// A mechanistic emulator conditioned on training runs.
#[derive(Clone, Debug)]
pub struct MemEmulator {
    pub prior: MemPrior,
    pub train_times: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    gp: Option<ConditionedGp<MemPoint, BlockKernel, ZeroMean>>,
}

fn check_times(times: &[f64]) -> Result<()> {
    crate::error::check_finite("times", times)?;
    if times.iter().any(|&t| t < 0.0) {
        return Err(Error::config("emulator times must be >= 0"));
    }
    Ok(())
}

/// Conditions the prior on `outputs` (one column per run, rows at `times`)
/// with regularization `kappa`. Gram points are ordered run-major.
pub fn condition_mem(prior: MemPrior, thetas: &[Vec<f64>], times: &[f64], outputs: &DMatrix<f64>, kappa: f64) -> Result<MemEmulator> {
    prior.template.validate()?;
    prior.coupling.validate()?;
    check_times(times)?;
    crate::error::check_len("training runs", outputs.ncols(), thetas.len())?;
    crate::error::check_len("training times", times.len(), outputs.nrows())?;
    if thetas.is_empty() || times.is_empty() {
        return Ok(MemEmulator { prior, train_times: times.to_vec(), thetas: thetas.to_vec(), gp: None });
    }
    let proxies = thetas.iter().map(|th| prior.proxy(th)).collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(thetas.len() * times.len());
    let mut resid = Vec::with_capacity(points.capacity());
    for (j, proxy) in proxies.iter().enumerate() {
        let mean = proxy.mean_series(times)?;
        for (i, &t) in times.iter().enumerate() {
            points.push(MemPoint { block: j, t });
            resid.push(outputs[(i, j)] - mean[i]);
        }
    }
    let kernel = BlockKernel { proxies, thetas: thetas.to_vec(), coupling: prior.coupling.clone() };
    let gp = condition(kernel, ZeroMean, points, &resid, kappa)?;
    Ok(MemEmulator { prior, train_times: times.to_vec(), thetas: thetas.to_vec(), gp: Some(gp) })
}

impl MemEmulator {
    /// Rebuilds a conditioned emulator from persisted parts. `alpha` is used
    /// as is; the Cholesky factor (for variances) is recomputed at `jitter`.
    pub fn from_parts(prior: MemPrior, thetas: Vec<Vec<f64>>, times: Vec<f64>, alpha: DVector<f64>, kappa: f64, jitter: f64) -> Result<Self> {
        prior.template.validate()?;
        prior.coupling.validate()?;
        check_times(&times)?;
        crate::error::check_len("MEM weights", thetas.len() * times.len(), alpha.len())?;
        if alpha.is_empty() {
            return Ok(MemEmulator { prior, train_times: times, thetas, gp: None });
        }
        let proxies = thetas.iter().map(|th| prior.proxy(th)).collect::<Result<Vec<_>>>()?;
        let points: Vec<MemPoint> =
            (0..thetas.len()).flat_map(|j| times.iter().map(move |&t| MemPoint { block: j, t })).collect();
        let kernel = BlockKernel { proxies, thetas: thetas.clone(), coupling: prior.coupling.clone() };
        let chol = crate::linalg::cholesky_with_jitter(&crate::gp::gram(&kernel, &points), jitter)?;
        let gp = ConditionedGp { kernel, mean: ZeroMean, inputs: points, alpha, chol, kappa };
        Ok(MemEmulator { prior, train_times: times, thetas, gp: Some(gp) })
    }

    /// Regularization requested at conditioning (0 without training data).
    pub fn kappa(&self) -> f64 {
        self.gp.as_ref().map_or(0.0, |g| g.kappa)
    }

    pub fn n_train(&self) -> usize {
        self.thetas.len()
    }

    /// Jitter actually added to the Gram diagonal (0 without training data).
    pub fn jitter(&self) -> f64 {
        self.gp.as_ref().map_or(0.0, |g| g.chol.jitter)
    }

    pub fn alpha(&self) -> Option<&DVector<f64>> {
        self.gp.as_ref().map(|g| &g.alpha)
    }

    fn query_cross(&self, gp: &ConditionedGp<MemPoint, BlockKernel, ZeroMean>, query: &LtiProxy, theta: &[f64], t: f64) -> Result<DVector<f64>> {
        let k = &gp.kernel;
        let mut cross = DVector::zeros(gp.inputs.len());
        for (slot, p) in cross.iter_mut().zip(&gp.inputs) {
            let c = k.coupling.value(theta, &k.thetas[p.block], false);
            if c != 0.0 {
                *slot = sde_covariance(query, &k.proxies[p.block], t, p.t, c, false)?;
            }
        }
        Ok(cross)
    }

    /// Predictive mean and variance at `theta` for every time in `times`.
    pub fn predict_detailed(&self, theta: &[f64], times: &[f64], with_variance: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        check_times(times)?;
        let query = self.prior.proxy(theta)?;
        let mut mean = query.mean_series(times)?;
        let prior_var = |t: f64| {
            let c = self.prior.coupling.value(theta, theta, true);
            sde_covariance(&query, &query, t, t, c, true)
        };
        let mut var = Vec::new();
        match &self.gp {
            None => {
                if with_variance {
                    var = times.iter().map(|&t| prior_var(t)).collect::<Result<_>>()?;
                }
            }
            Some(gp) => {
                for (k, &t) in times.iter().enumerate() {
                    let cross = self.query_cross(gp, &query, theta, t)?;
                    mean[k] += cross.dot(&gp.alpha);
                    if with_variance {
                        var.push(gp.variance_from_cross(&cross, prior_var(t)?));
                    }
                }
            }
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("emulator prediction"));
        }
        Ok((mean, var))
    }
}

impl Emulator for MemEmulator {
    fn predict(&self, theta: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_detailed(theta, times, false)?.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingFit {
    pub kernel: KernelSpec,
    pub log_marginal_likelihood: f64,
    pub evaluations: usize,
}

/// Chooses the coupling kernel hyperparameters by maximizing the marginal
/// likelihood of the runs in `subset`.
///
/// The likelihood is scored with a nugget of `kappa + 1e-10·mean(diag K)` so
/// that nearly singular candidates are ranked instead of rejected.
pub fn optimize_coupling(
    prior: &MemPrior,
    thetas: &[Vec<f64>],
    times: &[f64],
    outputs: &DMatrix<f64>,
    subset: &[usize],
    bounds: &[(f64, f64)],
    restarts: usize,
    seed: u64,
) -> Result<CouplingFit> {
    let Coupling::Kernel { kernel } = &prior.coupling else {
        return Err(Error::config("only kernel couplings have hyperparameters"));
    };
    kernel.validate()?;
    check_times(times)?;
    crate::error::check_len("hyperparameter bounds", kernel.n_params(), bounds.len())?;
    crate::error::check_len("training runs", outputs.ncols(), thetas.len())?;
    crate::error::check_len("training times", times.len(), outputs.nrows())?;
    if subset.is_empty() || subset.iter().any(|&j| j >= thetas.len()) {
        return Err(Error::config("coupling subset must be nonempty and index training runs"));
    }
    let proxies = subset.iter().map(|&j| prior.proxy(&thetas[j])).collect::<Result<Vec<_>>>()?;
    let nt = times.len();
    let n = subset.len() * nt;
    let mut resid = DVector::zeros(n);
    for (b, (&j, proxy)) in subset.iter().zip(&proxies).enumerate() {
        let mean = proxy.mean_series(times)?;
        for i in 0..nt {
            resid[b * nt + i] = outputs[(i, j)] - mean[i];
        }
    }
    // unit-coupling noise part and initial-state part of every entry
    let mut noise = DMatrix::zeros(n, n);
    let mut init = DMatrix::zeros(n, n);
    for bi in 0..subset.len() {
        for bj in bi..subset.len() {
            for (i, &t) in times.iter().enumerate() {
                for (k, &r) in times.iter().enumerate() {
                    let (row, col) = (bi * nt + i, bj * nt + k);
                    if bi == bj && col < row {
                        continue;
                    }
                    let nv = sde_covariance(&proxies[bi], &proxies[bj], t, r, 1.0, false)?;
                    let iv = if bi == bj { sde_covariance(&proxies[bi], &proxies[bj], t, r, 0.0, true)? } else { 0.0 };
                    noise[(row, col)] = nv;
                    noise[(col, row)] = nv;
                    init[(row, col)] = iv;
                    init[(col, row)] = iv;
                }
            }
        }
    }
    let residuals = [resid];
    let objective = |p: &[f64]| -> f64 {
        if p.iter().zip(bounds).any(|(v, (lo, hi))| v < lo || v > hi) {
            return f64::INFINITY;
        }
        let Ok(k) = kernel.with_log_params(p) else { return f64::INFINITY };
        let mut g = init.clone();
        for bi in 0..subset.len() {
            for bj in 0..subset.len() {
                let c = k.k(&thetas[subset[bi]], &thetas[subset[bj]]);
                for i in 0..nt {
                    for l in 0..nt {
                        g[(bi * nt + i, bj * nt + l)] += c * noise[(bi * nt + i, bj * nt + l)];
                    }
                }
            }
        }
        let nugget = prior_nugget(&g);
        match lml_from_gram(&g, &residuals, nugget) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut starts = alloc::vec![kernel.log_params().iter().zip(bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect::<Vec<f64>>()];
    for _ in 1..restarts.max(1) {
        starts.push(bounds.iter().map(|(lo, hi)| if hi > lo { rng.random_range(*lo..*hi) } else { *lo }).collect());
    }
    let step: Vec<f64> = bounds.iter().map(|(lo, hi)| ((hi - lo) * 0.1).max(1e-3)).collect();
    let nm = NelderMead { max_evals: 150 * (bounds.len() + 1), xtol: 1e-4, ftol: 1e-8 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    for s in &starts {
        let m = nm.minimize(&objective, s, &step);
        evaluations += m.evals;
        if m.value.is_finite() && best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (x, v) = best.ok_or_else(|| Error::Numerical("coupling likelihood is not finite at any start".into()))?;
    Ok(CouplingFit { kernel: kernel.with_log_params(&x)?, log_marginal_likelihood: -v, evaluations })
}

fn prior_nugget(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows().max(1) as f64;
    f64::EPSILON + 1e-10 * g.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NonlinearDs;
    use crate::gp::MaternNu;
    use crate::mem::{Actuation, InitialState};
    use alloc::vec;

    fn ds_prior(coupling: Coupling) -> MemPrior {
        MemPrior {
            template: ProxyTemplate::first_order(Actuation::Constant, InitialState::Param(0)),
            coupling,
            map: ParamMap::NonlinearDs { system: NonlinearDs::default() },
        }
    }

    fn ds_data(x0s: &[f64], times: &[f64]) -> DMatrix<f64> {
        let sys = NonlinearDs::default();
        DMatrix::from_fn(times.len(), x0s.len(), |i, j| sys.trajectory(x0s[j], times[i]))
    }

    #[test]
    fn no_training_runs_give_the_proxy_mean() {
        let prior = ds_prior(Coupling::Uncoupled { variance: 1.0 });
        let mem = condition_mem(prior.clone(), &[], &[0.0, 0.5], &DMatrix::zeros(2, 0), f64::EPSILON).unwrap();
        let times = [0.0, 0.3, 0.9];
        let got = mem.predict(&[0.4], &times).unwrap();
        let want = prior.proxy(&[0.4]).unwrap().mean_series(&times).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn exact_map_reproduces_unseen_trajectories() {
        let times = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let x0s = [-0.9, -0.2, 0.3, 0.8];
        let mem = condition_mem(ds_prior(Coupling::Uncoupled { variance: 1.0 }), &x0s.map(|x| vec![x]), &times, &ds_data(&x0s, &times), f64::EPSILON).unwrap();
        let sys = NonlinearDs::default();
        let fine: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        for x0 in [-0.55, 0.05, 0.61] {
            let got = mem.predict(&[x0], &fine).unwrap();
            for (g, &t) in got.iter().zip(&fine) {
                assert!((g - sys.trajectory(x0, t)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coupled_prediction_interpolates_training_columns() {
        let times = [0.1, 0.3, 0.5, 0.7];
        let x0s = [-0.7, 0.1, 0.6];
        let mut y = ds_data(&x0s, &times);
        // perturb so that the proxy mean alone is wrong
        y.iter_mut().enumerate().for_each(|(k, v)| *v += 0.05 * (k as f64).sin());
        let coupling = Coupling::Kernel { kernel: KernelSpec::matern(MaternNu::ThreeHalves, vec![0.5], 1.0) };
        let mem = condition_mem(ds_prior(coupling), &x0s.map(|x| vec![x]), &times, &y, f64::EPSILON).unwrap();
        for (j, &x0) in x0s.iter().enumerate() {
            let (m, v) = mem.predict_detailed(&[x0], &times, true).unwrap();
            for i in 0..times.len() {
                assert!((m[i] - y[(i, j)]).abs() < 1e-6, "run {j} time {i}: {} vs {}", m[i], y[(i, j)]);
                assert!(v[i] < 1e-6);
            }
        }
    }

    #[test]
    fn rebuilt_from_parts_predicts_identically() {
        let times = [0.1, 0.4, 0.7];
        let x0s = [-0.5, 0.2, 0.9];
        let mut y = ds_data(&x0s, &times);
        y.iter_mut().enumerate().for_each(|(k, v)| *v += 0.03 * (k as f64).cos());
        let coupling = Coupling::Kernel { kernel: KernelSpec::matern(MaternNu::ThreeHalves, vec![0.7], 0.5) };
        let thetas: Vec<Vec<f64>> = x0s.iter().map(|&x| vec![x]).collect();
        let mem = condition_mem(ds_prior(coupling.clone()), &thetas, &times, &y, f64::EPSILON).unwrap();
        let back = MemEmulator::from_parts(ds_prior(coupling), thetas, times.to_vec(), mem.alpha().unwrap().clone(), mem.kappa(), mem.jitter())
            .unwrap();
        let q = [0.0, 0.25, 0.55, 1.0];
        assert_eq!(back.predict_detailed(&[0.33], &q, true).unwrap(), mem.predict_detailed(&[0.33], &q, true).unwrap());
    }

    #[test]
    fn variance_is_prior_without_coupling() {
        let times = [0.0, 0.5, 1.0];
        let x0s = [-0.5, 0.5];
        let mem = condition_mem(ds_prior(Coupling::Uncoupled { variance: 2.0 }), &x0s.map(|x| vec![x]), &times, &ds_data(&x0s, &times), f64::EPSILON).unwrap();
        let (_, v) = mem.predict_detailed(&[0.0], &[0.5], true).unwrap();
        let a = NonlinearDs::default().rate(0.0);
        let want = 2.0 * ((2.0 * a * 0.5).exp() - 1.0) / (2.0 * a);
        assert!((v[0] - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn coupling_optimization_improves_likelihood() {
        let times = [0.1, 0.4, 0.7, 1.0];
        let x0s: Vec<f64> = (0..6).map(|i| -0.9 + 0.35 * i as f64).collect();
        let mut y = ds_data(&x0s, &times);
        for j in 0..x0s.len() {
            for i in 0..times.len() {
                y[(i, j)] += 0.1 * (1.0 - (-times[i]).exp()) * x0s[j];
            }
        }
        let start = KernelSpec::matern(MaternNu::ThreeHalves, vec![5.0], 0.01);
        let prior = ds_prior(Coupling::Kernel { kernel: start.clone() });
        let thetas: Vec<Vec<f64>> = x0s.iter().map(|&x| vec![x]).collect();
        let subset: Vec<usize> = (0..x0s.len()).collect();
        let bounds = [(-3.0, 3.0), (-10.0, 5.0)];
        let fit = optimize_coupling(&prior, &thetas, &times, &y, &subset, &bounds, 3, 1).unwrap();
        let once = optimize_coupling(&prior, &thetas, &times, &y, &subset, &bounds, 1, 1).unwrap();
        assert!(fit.log_marginal_likelihood >= once.log_marginal_likelihood - 1e-9);
        let again = optimize_coupling(&prior, &thetas, &times, &y, &subset, &bounds, 3, 1).unwrap();
        assert_eq!(fit, again);
    }
}
