use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{expm, exprel, integrate_adaptive};
use crate::signal::PiecewiseConstant;
use crate::{Error, Result};

/// `ds/dt = A s + input·signal(t) + offset`, `z = c·s`, `s(0) ~ N(s0, Σ0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiProxy {
    a: DMatrix<f64>,
    /// Diagonal of `A` when `A` is diagonal; enables closed forms.
    diag: Option<Vec<f64>>,
    pub input: DVector<f64>,
    pub offset: DVector<f64>,
    pub signal: PiecewiseConstant,
    pub c: DVector<f64>,
    pub s0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl LtiProxy {
    pub fn new(
        a: DMatrix<f64>,
        input: DVector<f64>,
        offset: DVector<f64>,
        signal: PiecewiseConstant,
        c: DVector<f64>,
        s0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let p = a.nrows();
        if p == 0 || a.ncols() != p {
            return Err(Error::config("system matrix must be square and nonempty"));
        }
        for (what, len) in [("input vector", input.len()), ("offset", offset.len()), ("observation row", c.len()), ("initial state", s0.len())] {
            crate::error::check_len(what, p, len)?;
        }
        crate::error::check_len("initial covariance", p, sigma0.nrows())?;
        crate::error::check_len("initial covariance", p, sigma0.ncols())?;
        if c.iter().all(|&v| v == 0.0) {
            return Err(Error::config("observation row must be nonzero"));
        }
        let all = a.iter().chain(input.iter()).chain(offset.iter()).chain(c.iter()).chain(s0.iter()).chain(sigma0.iter());
        if !all.clone().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("proxy definition"));
        }
        let is_diag = (0..p).all(|i| (0..p).all(|j| i == j || a[(i, j)] == 0.0));
        let diag = is_diag.then(|| a.diagonal().iter().copied().collect());
        Ok(Self { a, diag, input, offset, signal, c, s0, sigma0 })
    }

    /// First-order scalar proxy `ds/dt = rate·s + gain·signal(t)` observed directly.
    pub fn scalar(rate: f64, gain: f64, signal: PiecewiseConstant, s0: f64, sigma0: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, rate),
            DVector::from_element(1, gain),
            DVector::zeros(1),
            signal,
            DVector::from_element(1, 1.0),
            DVector::from_element(1, s0),
            DMatrix::from_element(1, 1, sigma0),
        )
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn system_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn diagonal(&self) -> Option<&[f64]> {
        self.diag.as_deref()
    }

    /// Whether every eigenvalue of `A` has negative real part. Only checked
    /// exactly for diagonal and 2×2 systems; larger dense systems use the
    /// Gershgorin discs as a sufficient test.
    pub fn is_stable(&self) -> bool {
        if let Some(d) = &self.diag {
            return d.iter().all(|&v| v < 0.0);
        }
        let a = &self.a;
        if a.nrows() == 2 {
            let (tr, det) = (a[(0, 0)] + a[(1, 1)], a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]);
            return tr < 0.0 && det > 0.0;
        }
        (0..a.nrows()).all(|i| a[(i, i)] + (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum::<f64>() < 0.0)
    }

    fn forcing(&self, level: f64) -> DVector<f64> {
        &self.input * level + &self.offset
    }

    /// Advances the state over `[t0, t0 + dt]` with the forcing held at `level`.
    fn step(&self, s: &mut DVector<f64>, dt: f64, level: f64) -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        let u = self.forcing(level);
        match &self.diag {
            Some(d) => {
                for k in 0..d.len() {
                    let x = d[k] * dt;
                    s[k] = s[k] * x.exp() + u[k] * dt * exprel(x);
                }
            }
            None => {
                // [[A, u], [0, 0]]·dt exponentiates to [[e^{A dt}, ∫e^{Aτ}dτ·u], [0, 1]]
                let p = self.dim();
                let mut aug = DMatrix::zeros(p + 1, p + 1);
                aug.view_mut((0, 0), (p, p)).copy_from(&(&self.a * dt));
                aug.view_mut((0, p), (p, 1)).copy_from(&(&u * dt));
                let e = expm(&aug)?;
                let next = e.view((0, 0), (p, p)) * &*s + e.view((0, p), (p, 1));
                *s = next;
            }
        }
        if s.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("proxy state"))
        }
    }

    /// Noise-free state at every requested time (any order, all `>= 0`).
    pub fn state_series(&self, times: &[f64]) -> Result<Vec<DVector<f64>>> {
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::config("proxy evaluation times must be finite and >= 0"));
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
        let mut out = alloc::vec![DVector::zeros(0); times.len()];
        let mut s = self.s0.clone();
        let mut now = 0.0;
        for &i in &order {
            let target = times[i];
            let breaks: Vec<f64> = self.signal.breaks_between(now, target).collect();
            for b in breaks {
                self.step(&mut s, b - now, self.signal.value(now))?;
                now = b;
            }
            self.step(&mut s, target - now, self.signal.value(now))?;
            now = target;
            out[i] = s.clone();
        }
        Ok(out)
    }

    /// Prior mean `c·s̄(t)` at every requested time.
    pub fn mean_series(&self, times: &[f64]) -> Result<Vec<f64>> {
        Ok(self.state_series(times)?.iter().map(|s| self.c.dot(s)).collect())
    }
}

/// `c·(e^{At} s̄0 + ∫₀ᵗ e^{A(t−τ)} u(τ) dτ)`.
pub fn mean_function(proxy: &LtiProxy, t: f64) -> Result<f64> {
    Ok(proxy.mean_series(&[t])?[0])
}

/// `∫₀^{min(t,r)} e^{a(t−μ)} e^{b(r−μ)} dμ` for scalars, written as
/// `e^{a(t−m)+b(r−m)}·m·exprel((a+b)m)` to stay finite for stable rates.
pub fn scalar_cross_integral(a: f64, b: f64, t: f64, r: f64) -> f64 {
    let m = t.min(r);
    if m <= 0.0 {
        return 0.0;
    }
    (a * (t - m) + b * (r - m)).exp() * m * exprel((a + b) * m)
}

/// Covariance between `z_i(t)` and `z_j(r)` under the stochastic-ODE prior
/// with driving-noise covariance `coupling·I` between the two blocks.
///
/// The initial-state term `c_i e^{A_i t} Σ0 e^{A_jᵀ r} c_jᵀ` is only present
/// within a block (`same_block`): initial states of different runs are
/// independent.
pub fn sde_covariance(pi: &LtiProxy, pj: &LtiProxy, t: f64, r: f64, coupling: f64, same_block: bool) -> Result<f64> {
    if !(t >= 0.0 && r >= 0.0) {
        return Err(Error::config("covariance times must be >= 0"));
    }
    crate::error::check_len("proxy dimensions", pi.dim(), pj.dim())?;
    let value = match (pi.diagonal(), pj.diagonal()) {
        (Some(ai), Some(aj)) => {
            let mut noise = 0.0;
            for k in 0..ai.len() {
                noise += pi.c[k] * pj.c[k] * scalar_cross_integral(ai[k], aj[k], t, r);
            }
            let mut init = 0.0;
            if same_block {
                for k in 0..ai.len() {
                    for l in 0..aj.len() {
                        let s = pi.sigma0[(k, l)];
                        if s != 0.0 {
                            init += pi.c[k] * (ai[k] * t).exp() * s * (aj[l] * r).exp() * pj.c[l];
                        }
                    }
                }
            }
            init + coupling * noise
        }
        _ => {
            let at = pi.system_matrix().transpose();
            let bt = pj.system_matrix().transpose();
            let m = t.min(r);
            let propagate = |mat: &DMatrix<f64>, dt: f64, c: &DVector<f64>| -> Option<DVector<f64>> {
                expm(&(mat * dt)).ok().map(|e| e * c)
            };
            let mut failed = false;
            let noise = if coupling != 0.0 && m > 0.0 {
                integrate_adaptive(
                    |mu| match (propagate(&at, t - mu, &pi.c), propagate(&bt, r - mu, &pj.c)) {
                        (Some(x), Some(y)) => x.dot(&y),
                        _ => {
                            failed = true;
                            0.0
                        }
                    },
                    0.0,
                    m,
                    1e-10,
                    1e-300,
                )
            } else {
                0.0
            };
            if failed {
                return Err(Error::Numerical("matrix exponential failed inside covariance quadrature".into()));
            }
            let init = if same_block && pi.sigma0.iter().any(|&v| v != 0.0) {
                let x = propagate(&at, t, &pi.c).ok_or(Error::NonFinite("covariance"))?;
                let y = propagate(&bt, r, &pj.c).ok_or(Error::NonFinite("covariance"))?;
                (x.transpose() * &pi.sigma0 * y)[0]
            } else {
                0.0
            };
            init + coupling * noise
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("covariance"))
    }
}
