//! Gaussian-process regression: kernels, conditioning, marginal likelihood
//! and hyperparameter search.

mod kernel;
mod regression;

pub use kernel::{matern_correlation, ConstantMean, Kernel, KernelSpec, MaternNu, Mean, ZeroMean};
pub use regression::{GpConfig, GpRegression, HyperSharing, KernelFamily};

use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use crate::error::check_len;
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::optim::NelderMead;
use crate::{Error, Result};

/// Gram matrix `K[i][j] = k(x_i, x_j)`, filled symmetrically.
pub fn gram<X, K: Kernel<X> + ?Sized>(kernel: &K, inputs: &[X]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.eval(&inputs[i], &inputs[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// A GP conditioned on noiseless (or κ-regularized) observations:
/// `α = (K + κI)⁻¹ (y − m)`.
#[derive(Clone, Debug)]
pub struct ConditionedGp<X, K, M> {
    pub kernel: K,
    pub mean: M,
    pub inputs: Vec<X>,
    pub alpha: DVector<f64>,
    pub chol: JitteredCholesky,
    /// Requested regularization; the jitter actually used is `chol.jitter`.
    pub kappa: f64,
}

/// Conditions the prior `GP(m, k)` on `y` observed at `inputs`.
///
/// The factorization starts at `κ` (at least machine epsilon) and escalates
/// the jitter tenfold up to `1e-4·mean(diag K)`.
pub fn condition<X, K: Kernel<X>, M: Mean<X>>(
    kernel: K,
    mean: M,
    inputs: Vec<X>,
    y: &[f64],
    kappa: f64,
) -> Result<ConditionedGp<X, K, M>> {
    check_len("training targets", inputs.len(), y.len())?;
    crate::error::check_finite("training targets", y)?;
    let k = gram(&kernel, &inputs);
    let resid = DVector::from_iterator(y.len(), y.iter().zip(&inputs).map(|(v, x)| v - mean.mean(x)));
    let chol = cholesky_with_jitter(&k, kappa)?;
    let alpha = chol.solve(&resid);
    Ok(ConditionedGp { kernel, mean, inputs, alpha, chol, kappa })
}

impl<X, K: Kernel<X>, M: Mean<X>> ConditionedGp<X, K, M> {
    pub fn cross(&self, x: &X) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.kernel.eval(x, xi)))
    }

    /// `k(x, X)·α + m(x)` for every query.
    pub fn predict_mean(&self, queries: &[X]) -> Vec<f64> {
        queries.iter().map(|x| self.cross(x).dot(&self.alpha) + self.mean.mean(x)).collect()
    }

    /// Posterior variance `k(x,x) − k(x,X)(K+κI)⁻¹k(X,x)`, clipped at zero.
    pub fn predict_variance(&self, queries: &[X]) -> Vec<f64> {
        queries
            .iter()
            .map(|x| self.variance_from_cross(&self.cross(x), self.kernel.eval(x, x)))
            .collect()
    }

    pub fn variance_from_cross(&self, cross: &DVector<f64>, prior: f64) -> f64 {
        if cross.is_empty() {
            return prior.max(0.0);
        }
        let v = self.chol.solve_lower(cross);
        (prior - v.norm_squared()).max(0.0)
    }
}

/// `−½ rᵀ(K+κI)⁻¹r − ½ log det(K+κI) − (n/2) log 2π` with `r = y − m`.
pub fn log_marginal_likelihood<X, K: Kernel<X>, M: Mean<X>>(
    kernel: &K,
    mean: &M,
    inputs: &[X],
    y: &[f64],
    kappa: f64,
) -> Result<f64> {
    check_len("training targets", inputs.len(), y.len())?;
    let resid = DVector::from_iterator(y.len(), y.iter().zip(inputs).map(|(v, x)| v - mean.mean(x)));
    let k = gram(kernel, inputs);
    lml_from_gram(&k, core::slice::from_ref(&resid), kappa)
}

/// Sum of the log marginal likelihoods of several residual vectors that
/// share one Gram matrix.
pub(crate) fn lml_from_gram(k: &DMatrix<f64>, residuals: &[DVector<f64>], kappa: f64) -> Result<f64> {
    let n = k.nrows() as f64;
    let chol = exact_cholesky(k, kappa)?;
    let log_det = chol.log_det();
    let mut total = 0.0;
    for r in residuals {
        let alpha = chol.solve(r);
        total += -0.5 * r.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln();
    }
    Ok(total)
}

/// Factorization at exactly `κ` (no escalation): the likelihood must be
/// that of the model being scored.
fn exact_cholesky(k: &DMatrix<f64>, kappa: f64) -> Result<JitteredCholesky> {
    let mut shifted = k.clone();
    for i in 0..k.nrows() {
        shifted[(i, i)] += kappa;
    }
    match shifted.cholesky() {
        Some(factor) => Ok(JitteredCholesky { factor, jitter: kappa }),
        None => Err(Error::Factorization { jitter: kappa, condition: f64::INFINITY }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperOptResult {
    pub kernel: KernelSpec,
    pub log_marginal_likelihood: f64,
    /// Log marginal likelihood at each start point (`-∞` if it failed).
    pub start_values: Vec<f64>,
    pub evaluations: usize,
}

/// Multi-start Nelder–Mead on the log hyperparameters of `kernel`, maximizing
/// the summed log marginal likelihood of all target vectors.
///
/// The first start is the given kernel (clamped into the bounds); the others
/// are uniform draws inside `bounds` from a generator seeded with `seed`.
/// Candidates are scored with a nugget of `κ + 1e-10·mean(diag K)`, so that
/// smooth kernels on dense designs stay factorizable during the search.
pub fn optimize_hyperparams<X, M: Mean<X>>(
    kernel: &KernelSpec,
    mean: &M,
    inputs: &[X],
    targets: &[Vec<f64>],
    kappa: f64,
    bounds: &[(f64, f64)],
    restarts: usize,
    seed: u64,
) -> Result<HyperOptResult>
where
    KernelSpec: Kernel<X>,
{
    let dim = kernel.n_params();
    check_len("hyperparameter bounds", dim, bounds.len())?;
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::config("hyperparameter bounds must be finite with lo <= hi"));
    }
    let residuals = targets
        .iter()
        .map(|y| {
            check_len("training targets", inputs.len(), y.len())?;
            crate::error::check_finite("training targets", y)?;
            Ok(DVector::from_iterator(y.len(), y.iter().zip(inputs).map(|(v, x)| v - mean.mean(x))))
        })
        .collect::<Result<Vec<_>>>()?;

    let objective = |p: &[f64]| -> f64 {
        if p.iter().zip(bounds).any(|(v, (lo, hi))| v < lo || v > hi) {
            return f64::INFINITY;
        }
        let Ok(k) = kernel.with_log_params(p) else { return f64::INFINITY };
        let g = gram(&k, inputs);
        let nugget = kappa + 1e-10 * g.diagonal().mean();
        match lml_from_gram(&g, &residuals, nugget) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(kernel.log_params().iter().zip(bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect());
    for _ in 1..restarts.max(1) {
        starts.push(bounds.iter().map(|(lo, hi)| if hi > lo { rng.random_range(*lo..*hi) } else { *lo }).collect());
    }
    let step: Vec<f64> = bounds.iter().map(|(lo, hi)| ((hi - lo) * 0.1).max(1e-3)).collect();
    let nm = NelderMead { max_evals: 400 * (dim + 1), xtol: 1e-6, ftol: 1e-10 };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_values = Vec::new();
    let mut evaluations = 0;
    for s in &starts {
        let f0 = objective(s);
        start_values.push(-f0);
        let m = nm.minimize(objective, s, &step);
        evaluations += m.evals + 1;
        let (x, v) = if m.value <= f0 { (m.x, m.value) } else { (s.clone(), f0) };
        if v.is_finite() && best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((x, v));
        }
    }
    let (x, v) = best.ok_or_else(|| Error::Numerical("no start produced a finite log marginal likelihood".into()))?;
    Ok(HyperOptResult { kernel: kernel.with_log_params(&x)?, log_marginal_likelihood: -v, start_values, evaluations })
}
