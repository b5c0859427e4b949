use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use super::kernel::{KernelSpec, MaternNu};
use super::{gram, optimize_hyperparams, ZeroMean};
use crate::error::{check_finite, check_len};
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KernelFamily {
    SquaredExponential,
    Matern(MaternNu),
}

/// Whether the outputs of a multi-output regression share one set of
/// kernel hyperparameters (fitted on the summed likelihood) or get their own.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HyperSharing {
    Shared,
    PerOutput,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GpConfig {
    pub family: KernelFamily,
    pub kappa: f64,
    pub optimize: bool,
    pub restarts: usize,
    pub seed: u64,
    pub sharing: HyperSharing,
    /// Initial lengthscale in standardized input units.
    pub lengthscale: f64,
    /// Search box for lengthscales, standardized units.
    pub lengthscale_bounds: (f64, f64),
    /// Search box for the signal variance relative to the target variance.
    pub variance_bounds: (f64, f64),
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            kappa: f64::EPSILON,
            optimize: true,
            restarts: 3,
            seed: 0,
            sharing: HyperSharing::PerOutput,
            lengthscale: 1.0,
            lengthscale_bounds: (0.02, 50.0),
            variance_bounds: (1e-3, 1e3),
        }
    }
}

/// GP regression from real parameter vectors to one or more real outputs.
///
/// Inputs are standardized per dimension and each output is centered on its
/// training mean; kernels are ARD over the standardized inputs. Every output
/// has its own weight vector `α`.
#[derive(Clone, Debug)]
pub struct GpRegression {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_means: Vec<f64>,
    /// Raw (unstandardized) training inputs.
    pub train_inputs: Vec<Vec<f64>>,
    /// One kernel when shared, otherwise one per output.
    pub kernels: Vec<KernelSpec>,
    /// `n_train × n_outputs`.
    pub alphas: DMatrix<f64>,
    pub kappa: f64,
    /// Log marginal likelihood per kernel at the selected hyperparameters.
    pub log_marginal_likelihood: Vec<f64>,
    /// Closest pair of training inputs if their distance is below `1e-10`.
    pub near_duplicate: Option<(usize, usize)>,
    standardized: Vec<Vec<f64>>,
    /// `standardized` laid out row-major.
    flat: Vec<f64>,
    chols: Vec<JitteredCholesky>,
}

impl GpRegression {
    /// `targets[k][i]` is output `k` at training input `i`.
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>], config: &GpConfig) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::config("GP regression needs at least one training input"));
        }
        if targets.is_empty() {
            return Err(Error::config("GP regression needs at least one output"));
        }
        let dim = inputs[0].len();
        for x in inputs {
            check_len("GP input dimension", dim, x.len())?;
            check_finite("GP inputs", x)?;
        }
        for y in targets {
            check_len("GP targets", n, y.len())?;
            check_finite("GP targets", y)?;
        }
        if !(config.kappa >= 0.0) || config.lengthscale <= 0.0 {
            return Err(Error::config("GP kappa must be >= 0 and the initial lengthscale > 0"));
        }

        let input_mean: Vec<f64> = (0..dim).map(|d| inputs.iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
        let input_scale: Vec<f64> = (0..dim)
            .map(|d| {
                let var = inputs.iter().map(|x| (x[d] - input_mean[d]).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let standardized: Vec<Vec<f64>> = inputs.iter().map(|x| standardize(x, &input_mean, &input_scale)).collect();
        let output_means: Vec<f64> = targets.iter().map(|y| y.iter().sum::<f64>() / n as f64).collect();
        let centered: Vec<Vec<f64>> =
            targets.iter().zip(&output_means).map(|(y, m)| y.iter().map(|v| v - m).collect()).collect();

        let groups: Vec<Vec<usize>> = match config.sharing {
            HyperSharing::Shared => alloc::vec![(0..targets.len()).collect()],
            HyperSharing::PerOutput => (0..targets.len()).map(|k| alloc::vec![k]).collect(),
        };
        let mut kernels = Vec::new();
        let mut lmls = Vec::new();
        let mut chols = Vec::new();
        let mut alphas = DMatrix::zeros(n, targets.len());
        for (g, members) in groups.iter().enumerate() {
            let group_targets: Vec<Vec<f64>> = members.iter().map(|&k| centered[k].clone()).collect();
            let var = group_targets.iter().flat_map(|y| y.iter()).map(|v| v * v).sum::<f64>()
                / (n * members.len()) as f64;
            let var = if var > 0.0 { var } else { 1.0 };
            let init = base_kernel(config.family, alloc::vec![config.lengthscale; dim], var);
            let (kernel, lml) = if config.optimize && n > 1 {
                let (llo, lhi) = config.lengthscale_bounds;
                let (vlo, vhi) = config.variance_bounds;
                let mut bounds: Vec<(f64, f64)> = alloc::vec![(llo.ln(), lhi.ln()); dim];
                bounds.push(((var * vlo).ln(), (var * vhi).ln()));
                let res = optimize_hyperparams(
                    &init,
                    &ZeroMean,
                    &standardized,
                    &group_targets,
                    config.kappa.max(f64::EPSILON),
                    &bounds,
                    config.restarts,
                    config.seed.wrapping_add(g as u64),
                )?;
                (res.kernel, res.log_marginal_likelihood)
            } else {
                (init, f64::NAN)
            };
            let chol = cholesky_with_jitter(&gram(&kernel, &standardized), config.kappa)?;
            for &k in members {
                let a = chol.solve(&DVector::from_column_slice(&centered[k]));
                alphas.set_column(k, &a);
            }
            kernels.push(kernel);
            lmls.push(lml);
            chols.push(chol);
        }

        Ok(Self {
            near_duplicate: closest_pair(&standardized, &input_scale),
            input_mean,
            input_scale,
            output_means,
            train_inputs: inputs.to_vec(),
            kernels,
            alphas,
            kappa: config.kappa,
            log_marginal_likelihood: lmls,
            flat: standardized.concat(),
            standardized,
            chols,
        })
    }

    /// Rebuilds a fitted regression from persisted parts. The stored `α` are
    /// used as is; Cholesky factors (for variances) are recomputed at the
    /// stored jitters.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
        output_means: Vec<f64>,
        train_inputs: Vec<Vec<f64>>,
        kernels: Vec<KernelSpec>,
        alphas: DMatrix<f64>,
        kappa: f64,
        jitters: &[f64],
    ) -> Result<Self> {
        let n = train_inputs.len();
        let dim = input_mean.len();
        check_len("input scale", dim, input_scale.len())?;
        check_len("alpha rows", n, alphas.nrows())?;
        check_len("alpha columns", output_means.len(), alphas.ncols())?;
        check_len("jitters", kernels.len(), jitters.len())?;
        if kernels.len() != 1 && kernels.len() != output_means.len() {
            return Err(Error::DimensionMismatch { what: "GP kernels", expected: output_means.len(), got: kernels.len() });
        }
        for k in &kernels {
            k.validate()?;
        }
        let standardized: Vec<Vec<f64>> = train_inputs
            .iter()
            .map(|x| {
                check_len("GP input dimension", dim, x.len())?;
                Ok(standardize(x, &input_mean, &input_scale))
            })
            .collect::<Result<_>>()?;
        let chols = kernels
            .iter()
            .zip(jitters)
            .map(|(k, &j)| cholesky_with_jitter(&gram(k, &standardized), j))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            near_duplicate: closest_pair(&standardized, &input_scale),
            input_mean,
            input_scale,
            output_means,
            train_inputs,
            kernels,
            alphas,
            kappa,
            log_marginal_likelihood: alloc::vec![f64::NAN; jitters.len()],
            flat: standardized.concat(),
            standardized,
            chols,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.output_means.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn jitters(&self) -> Vec<f64> {
        self.chols.iter().map(|c| c.jitter).collect()
    }

    fn kernel_index(&self, output: usize) -> usize {
        if self.kernels.len() == 1 { 0 } else { output }
    }

    pub fn kernel(&self, output: usize) -> &KernelSpec {
        &self.kernels[self.kernel_index(output)]
    }

    fn cross_vectors(&self, z: &[f64]) -> Vec<DVector<f64>> {
        let n = self.standardized.len();
        self.kernels
            .iter()
            .map(|k| {
                let mut c = DVector::zeros(n);
                k.cross_into(z, &self.flat, c.as_mut_slice());
                c
            })
            .collect()
    }

    /// Predictive mean of every output at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("GP query dimension", self.input_dim(), x.len())?;
        let z = standardize(x, &self.input_mean, &self.input_scale);
        let n = self.standardized.len();
        let mut cross = alloc::vec![0.0; n * self.kernels.len()];
        for (k, c) in self.kernels.iter().zip(cross.chunks_exact_mut(n.max(1))) {
            k.cross_into(&z, &self.flat, c);
        }
        let alphas = self.alphas.as_slice();
        Ok((0..self.n_outputs())
            .map(|k| {
                let c = &cross[self.kernel_index(k) * n..][..n];
                dot(c, &alphas[k * n..][..n]) + self.output_means[k]
            })
            .collect())
    }

    /// Predictive mean and variance of every output at `x`.
    pub fn predict_with_variance(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mean = self.predict(x)?;
        let z = standardize(x, &self.input_mean, &self.input_scale);
        let cross = self.cross_vectors(&z);
        let per_kernel: Vec<f64> = self
            .kernels
            .iter()
            .zip(&self.chols)
            .zip(&cross)
            .map(|((k, chol), c)| {
                let v = chol.solve_lower(c);
                (k.k(&z, &z) - v.norm_squared()).max(0.0)
            })
            .collect();
        let var = (0..self.n_outputs()).map(|k| per_kernel[self.kernel_index(k)]).collect();
        Ok((mean, var))
    }

    /// True if every coordinate of `x` lies inside the range of the training inputs.
    pub fn in_training_box(&self, x: &[f64]) -> bool {
        (0..self.input_dim()).all(|d| {
            let lo = self.train_inputs.iter().map(|t| t[d]).fold(f64::INFINITY, f64::min);
            let hi = self.train_inputs.iter().map(|t| t[d]).fold(f64::NEG_INFINITY, f64::max);
            x[d] >= lo && x[d] <= hi
        })
    }
}

fn base_kernel(family: KernelFamily, lengthscales: Vec<f64>, variance: f64) -> KernelSpec {
    match family {
        KernelFamily::SquaredExponential => KernelSpec::squared_exponential(lengthscales, variance),
        KernelFamily::Matern(nu) => KernelSpec::matern(nu, lengthscales, variance),
    }
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn closest_pair(standardized: &[Vec<f64>], scale: &[f64]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..standardized.len() {
        for j in i + 1..standardized.len() {
            let d = standardized[i]
                .iter()
                .zip(&standardized[j])
                .zip(scale)
                .map(|((a, b), s)| ((a - b) * s).powi(2))
                .sum::<f64>()
                .sqrt();
            if d < 1e-10 && best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((i, j, d));
            }
        }
    }
    best.map(|(i, j, _)| (i, j))
}
