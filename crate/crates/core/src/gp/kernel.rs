use alloc::boxed::Box;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// A covariance function over inputs of type `X`.
pub trait Kernel<X> {
    fn eval(&self, a: &X, b: &X) -> f64;
}

/// A prior mean over inputs of type `X`.
pub trait Mean<X> {
    fn mean(&self, x: &X) -> f64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZeroMean;

impl<X> Mean<X> for ZeroMean {
    fn mean(&self, _: &X) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantMean(pub f64);

impl<X> Mean<X> for ConstantMean {
    fn mean(&self, _: &X) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }

    pub fn from_value(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(MaternNu::Half),
            v if v == 1.5 => Ok(MaternNu::ThreeHalves),
            v if v == 2.5 => Ok(MaternNu::FiveHalves),
            _ => Err(Error::config(alloc::format!("unsupported Matérn order {nu}; use 0.5, 1.5 or 2.5"))),
        }
    }
}

/// Stationary kernels over real vectors and their combinations.
///
/// Lengthscales are per input dimension (ARD); a single lengthscale is
/// broadcast to every dimension.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case"))]
pub enum KernelSpec {
    SquaredExponential { lengthscales: Vec<f64>, variance: f64 },
    Matern { nu: MaternNu, lengthscales: Vec<f64>, variance: f64 },
    Sum { left: Box<KernelSpec>, right: Box<KernelSpec> },
    Product { left: Box<KernelSpec>, right: Box<KernelSpec> },
    Scaled { factor: f64, inner: Box<KernelSpec> },
}

impl KernelSpec {
    pub fn squared_exponential(lengthscales: Vec<f64>, variance: f64) -> Self {
        KernelSpec::SquaredExponential { lengthscales, variance }
    }

    pub fn matern(nu: MaternNu, lengthscales: Vec<f64>, variance: f64) -> Self {
        KernelSpec::Matern { nu, lengthscales, variance }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::SquaredExponential { lengthscales, variance } | KernelSpec::Matern { lengthscales, variance, .. } => {
                if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::config("kernel lengthscales must be positive and finite"));
                }
                if !(*variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::config("kernel variance must be nonnegative and finite"));
                }
                Ok(())
            }
            KernelSpec::Sum { left, right } | KernelSpec::Product { left, right } => {
                left.validate()?;
                right.validate()
            }
            KernelSpec::Scaled { factor, inner } => {
                if !(*factor >= 0.0 && factor.is_finite()) {
                    return Err(Error::config("kernel scale factor must be nonnegative and finite"));
                }
                inner.validate()
            }
        }
    }

    /// `k(x, x)`.
    pub fn variance(&self) -> f64 {
        match self {
            KernelSpec::SquaredExponential { variance, .. } | KernelSpec::Matern { variance, .. } => *variance,
            KernelSpec::Sum { left, right } => left.variance() + right.variance(),
            KernelSpec::Product { left, right } => left.variance() * right.variance(),
            KernelSpec::Scaled { factor, inner } => factor * inner.variance(),
        }
    }

    /// Hyperparameters in log space: for a base kernel the log lengthscales
    /// followed by the log variance; composites concatenate their parts.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.push_log_params(&mut out);
        out
    }

    fn push_log_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::SquaredExponential { lengthscales, variance } | KernelSpec::Matern { lengthscales, variance, .. } => {
                out.extend(lengthscales.iter().map(|l| l.ln()));
                out.push(variance.ln());
            }
            KernelSpec::Sum { left, right } | KernelSpec::Product { left, right } => {
                left.push_log_params(out);
                right.push_log_params(out);
            }
            KernelSpec::Scaled { factor, inner } => {
                out.push(factor.ln());
                inner.push_log_params(out);
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.log_params().len()
    }

    /// Same structure with hyperparameters taken from `params` (log space).
    pub fn with_log_params(&self, params: &[f64]) -> Result<Self> {
        let mut rest = params;
        let out = self.take_log_params(&mut rest);
        if !rest.is_empty() {
            return Err(Error::DimensionMismatch { what: "kernel hyperparameters", expected: self.n_params(), got: params.len() });
        }
        out.ok_or(Error::DimensionMismatch { what: "kernel hyperparameters", expected: self.n_params(), got: params.len() })
    }

    fn take_log_params(&self, rest: &mut &[f64]) -> Option<Self> {
        let next = |rest: &mut &[f64]| -> Option<f64> {
            let (&v, tail) = rest.split_first()?;
            *rest = tail;
            Some(v.exp())
        };
        Some(match self {
            KernelSpec::SquaredExponential { lengthscales, .. } => {
                let ls = lengthscales.iter().map(|_| next(rest)).collect::<Option<Vec<_>>>()?;
                KernelSpec::SquaredExponential { lengthscales: ls, variance: next(rest)? }
            }
            KernelSpec::Matern { nu, lengthscales, .. } => {
                let ls = lengthscales.iter().map(|_| next(rest)).collect::<Option<Vec<_>>>()?;
                KernelSpec::Matern { nu: *nu, lengthscales: ls, variance: next(rest)? }
            }
            KernelSpec::Sum { left, right } => KernelSpec::Sum {
                left: Box::new(left.take_log_params(rest)?),
                right: Box::new(right.take_log_params(rest)?),
            },
            KernelSpec::Product { left, right } => KernelSpec::Product {
                left: Box::new(left.take_log_params(rest)?),
                right: Box::new(right.take_log_params(rest)?),
            },
            KernelSpec::Scaled { inner, .. } => {
                let factor = next(rest)?;
                KernelSpec::Scaled { factor, inner: Box::new(inner.take_log_params(rest)?) }
            }
        })
    }

    /// Kernel value on raw slices.
    pub fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::SquaredExponential { lengthscales, variance } => {
                variance * (-0.5 * scaled_sq_dist(a, b, lengthscales)).exp()
            }
            KernelSpec::Matern { nu, lengthscales, variance } => {
                let r = scaled_sq_dist(a, b, lengthscales).sqrt();
                variance * matern_correlation(*nu, r)
            }
            KernelSpec::Sum { left, right } => left.k(a, b) + right.k(a, b),
            KernelSpec::Product { left, right } => left.k(a, b) * right.k(a, b),
            KernelSpec::Scaled { factor, inner } => factor * inner.k(a, b),
        }
    }
}

impl KernelSpec {
    /// `out[i] = k(z, x_i)` for points `x_i` stored row-major in `points`,
    /// each of length `z.len()`.
    pub fn cross_into(&self, z: &[f64], points: &[f64], out: &mut [f64]) {
        let d = z.len();
        if d == 0 {
            out.fill(self.k(z, &[]));
            return;
        }
        let rows = points.chunks_exact(d);
        match self {
            KernelSpec::SquaredExponential { lengthscales, variance } => {
                let inv = inverse_lengthscales(lengthscales, d);
                for (o, x) in out.iter_mut().zip(rows) {
                    *o = variance * (-0.5 * weighted_sq_dist(z, x, &inv)).exp();
                }
            }
            KernelSpec::Matern { nu, lengthscales, variance } => {
                let inv = inverse_lengthscales(lengthscales, d);
                for (o, x) in out.iter_mut().zip(rows) {
                    *o = variance * matern_correlation(*nu, weighted_sq_dist(z, x, &inv).sqrt());
                }
            }
            _ => {
                for (o, x) in out.iter_mut().zip(rows) {
                    *o = self.k(z, x);
                }
            }
        }
    }
}

fn inverse_lengthscales(lengthscales: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| 1.0 / if lengthscales.len() == 1 { lengthscales[0] } else { lengthscales[i] }).collect()
}

fn weighted_sq_dist(a: &[f64], b: &[f64], inv: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((x, y), w) in a.iter().zip(b).zip(inv) {
        let d = (x - y) * w;
        acc += d * d;
    }
    acc
}

impl<X: AsRef<[f64]>> Kernel<X> for KernelSpec {
    fn eval(&self, a: &X, b: &X) -> f64 {
        self.k(a.as_ref(), b.as_ref())
    }
}

/// Matérn correlation at scaled distance `r = ‖x − x'‖/ℓ`.
pub fn matern_correlation(nu: MaternNu, r: f64) -> f64 {
    match nu {
        MaternNu::Half => (-r).exp(),
        MaternNu::ThreeHalves => {
            let s = 3f64.sqrt() * r;
            (1.0 + s) * (-s).exp()
        }
        MaternNu::FiveHalves => {
            let s = 5f64.sqrt() * r;
            (1.0 + s + s * s / 3.0) * (-s).exp()
        }
    }
}

fn scaled_sq_dist(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let l = if lengthscales.len() == 1 { lengthscales[0] } else { lengthscales[i] };
        let d = (x - y) / l;
        acc += d * d;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;

    #[test]
    fn matern_half_is_exponential() {
        let k = KernelSpec::matern(MaternNu::Half, alloc::vec![0.7], 2.5);
        for &(a, b) in &[(0.0, 0.3), (1.0, -2.0), (0.5, 0.5)] {
            let want = 2.5 * (-(a - b).abs() / 0.7).exp();
            assert!((k.k(&[a], &[b]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn log_param_round_trip() {
        let k = KernelSpec::Sum {
            left: Box::new(KernelSpec::squared_exponential(alloc::vec![0.5, 2.0], 1.5)),
            right: Box::new(KernelSpec::Scaled {
                factor: 0.1,
                inner: Box::new(KernelSpec::matern(MaternNu::FiveHalves, alloc::vec![3.0], 1.0)),
            }),
        };
        let p = k.log_params();
        assert_eq!(p.len(), 6);
        let back = k.with_log_params(&p).unwrap();
        for (a, b) in back.log_params().iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(k.with_log_params(&p[..5]).is_err());
        assert!(k.with_log_params(&[p.clone(), alloc::vec![0.0]].concat()).is_err());
    }

    #[test]
    fn nu_parsing() {
        assert_eq!(MaternNu::from_value(1.5).unwrap(), MaternNu::ThreeHalves);
        assert!(MaternNu::from_value(1.0).is_err());
    }

    fn kernels() -> impl Strategy<Value = KernelSpec> {
        let ls = proptest::collection::vec(0.05f64..5.0, 2);
        let base = prop_oneof![
            (ls.clone(), 0.1f64..10.0).prop_map(|(l, v)| KernelSpec::squared_exponential(l, v)),
            (ls.clone(), 0.1f64..10.0, 0usize..3).prop_map(|(l, v, n)| {
                let nu = [MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves][n];
                KernelSpec::matern(nu, l, v)
            }),
        ];
        base.prop_recursive(2, 4, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| KernelSpec::Sum { left: Box::new(a), right: Box::new(b) }),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| KernelSpec::Product { left: Box::new(a), right: Box::new(b) }),
                (0.1f64..3.0, inner).prop_map(|(f, k)| KernelSpec::Scaled { factor: f, inner: Box::new(k) }),
            ]
        })
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_psd(k in kernels(), pts in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 1..50)) {
            let n = pts.len();
            let g = DMatrix::from_fn(n, n, |i, j| k.eval(&pts[i], &pts[j]));
            prop_assert!((&g - g.transpose()).amax() < 1e-12);
            let norm = g.amax() * n as f64;
            let min_eig = SymmetricEigen::new(g).eigenvalues.min();
            prop_assert!(min_eig >= -1e-8 * norm, "min eigenvalue {}", min_eig);
        }
    }
}
