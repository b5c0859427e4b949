//! Data-driven emulator: a time basis from factorizing the training outputs,
//! GP interpolation of the basis coefficients over simulator parameters, and
//! linear interpolation of the basis in time.

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::dataset::TimeSeriesDataset;
use crate::factorization::{nmf_factorize, svd_factorize, FactorMethod, FactorModel, NmfConfig};
use crate::gp::{GpConfig, GpRegression};
use crate::{Emulator, Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DataDrivenConfig {
    pub method: FactorMethod,
    pub q: usize,
    pub nmf: NmfConfig,
    pub gp: GpConfig,
    /// Clip GP-predicted coefficients at zero (only meaningful for NMF).
    pub clip_negative: bool,
}

impl DataDrivenConfig {
    pub fn new(method: FactorMethod, q: usize) -> Self {
        Self { method, q, nmf: NmfConfig::default(), gp: GpConfig::default(), clip_negative: false }
    }
}

#[derive(Clone, Debug)]
pub struct DataDrivenEmulator {
    pub factor: FactorModel,
    /// One output per coefficient row of the factorization.
    pub gp: GpRegression,
    pub times: Vec<f64>,
    pub clip_negative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    /// Empty unless requested.
    pub variance: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// The query lies outside the bounding box of the training parameters.
    pub outside_hull: bool,
    /// Some GP-predicted coefficient was negative beyond round-off (before
    /// optional clipping).
    pub negative_coefficients: bool,
}

/// Trains on the training runs of the dataset's split.
pub fn train_data_driven(ds: &TimeSeriesDataset, config: &DataDrivenConfig) -> Result<DataDrivenEmulator> {
    let split = ds.require_split()?;
    train_on(ds.times(), &ds.select_columns(&split.train), &ds.select_params(&split.train), config)
}

/// Trains on explicit data: `outputs` has one column per entry of `thetas`.
pub fn train_on(times: &[f64], outputs: &DMatrix<f64>, thetas: &[Vec<f64>], config: &DataDrivenConfig) -> Result<DataDrivenEmulator> {
    crate::error::check_len("training times", times.len(), outputs.nrows())?;
    crate::error::check_len("training runs", outputs.ncols(), thetas.len())?;
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("training times must be strictly increasing with at least two points"));
    }
    let factor = match config.method {
        FactorMethod::Svd => svd_factorize(outputs, config.q)?,
        FactorMethod::Nmf => nmf_factorize(outputs, config.q, &config.nmf)?,
    };
    let targets: Vec<Vec<f64>> = (0..factor.rank()).map(|k| factor.coeffs.row(k).iter().copied().collect()).collect();
    let gp = GpRegression::fit(thetas, &targets, &config.gp)?;
    Ok(DataDrivenEmulator { factor, gp, times: times.to_vec(), clip_negative: config.clip_negative })
}

/// Segment index `k` and weight `w` with `value(t) = (1−w)·row_k + w·row_{k+1}`.
pub fn time_weights(grid: &[f64], t: f64) -> Result<(usize, f64)> {
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    if !(t >= lo && t <= hi) {
        return Err(Error::TimeOutOfRange { t, min: lo, max: hi });
    }
    let k = grid.partition_point(|&g| g <= t).saturating_sub(1).min(grid.len() - 2);
    let w = (t - grid[k]) / (grid[k + 1] - grid[k]);
    Ok((k, w))
}

/// [`time_weights`] starting the segment search at `hint`, which makes a pass
/// over increasing times linear.
fn time_weights_from(grid: &[f64], t: f64, hint: usize) -> Result<(usize, f64)> {
    let last = grid.len() - 2;
    if hint > last || !(grid[hint] <= t) || !(t <= grid[last + 1]) {
        return time_weights(grid, t);
    }
    let mut k = hint;
    while k < last && grid[k + 1] <= t {
        k += 1;
    }
    Ok((k, (t - grid[k]) / (grid[k + 1] - grid[k])))
}

impl DataDrivenEmulator {
    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    /// Basis rows linearly interpolated to `t`.
    pub fn basis_at(&self, t: f64) -> Result<Vec<f64>> {
        let (k, w) = time_weights(&self.times, t)?;
        let b = &self.factor.basis;
        Ok((0..self.rank())
            .map(|i| if w == 0.0 { b[(k, i)] } else { (1.0 - w) * b[(k, i)] + w * b[(k + 1, i)] })
            .collect())
    }

    pub fn predict_detailed(&self, theta: &[f64], times: &[f64], with_variance: bool) -> Result<Prediction> {
        let (mut beta, beta_var) = if with_variance {
            self.gp.predict_with_variance(theta)?
        } else {
            (self.gp.predict(theta)?, Vec::new())
        };
        // interpolation round-off around exact zeros is not reported
        let negative_coefficients = beta.iter().enumerate().any(|(k, &b)| {
            b < 0.0 && b < -1e-10 * self.factor.coeffs.row(k).iter().fold(0.0f64, |m, v| m.max(v.abs()))
        });
        if self.clip_negative {
            beta.iter_mut().for_each(|b| *b = b.max(0.0));
        }
        let mut values = Vec::with_capacity(times.len());
        let mut variance = Vec::new();
        for &t in times {
            let phi = self.basis_at(t)?;
            values.push(phi.iter().zip(&beta).map(|(p, b)| p * b).sum());
            if with_variance {
                variance.push(phi.iter().zip(&beta_var).map(|(p, v)| p * p * v).sum());
            }
        }
        Ok(Prediction {
            values,
            variance,
            coefficients: beta,
            outside_hull: !self.gp.in_training_box(theta),
            negative_coefficients,
        })
    }

    /// Mean and variance, the variance propagated through the fixed basis
    /// assuming independent coefficients.
    pub fn predict_with_uncertainty(&self, theta: &[f64], times: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.predict_detailed(theta, times, true)?;
        Ok((p.values, p.variance))
    }
}

impl Emulator for DataDrivenEmulator {
    /// Same values as [`DataDrivenEmulator::predict_detailed`], without the diagnostics.
    fn predict(&self, theta: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let mut beta = self.gp.predict(theta)?;
        if self.clip_negative {
            beta.iter_mut().for_each(|b| *b = b.max(0.0));
        }
        let b = &self.factor.basis;
        let mut hint = 0;
        times
            .iter()
            .map(|&t| {
                let (k, w) = time_weights_from(&self.times, t, hint)?;
                hint = k;
                Ok(beta
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if w == 0.0 { b[(k, i)] } else { (1.0 - w) * b[(k, i)] + w * b[(k + 1, i)] } * c)
                    .sum())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::HyperSharing;
    use alloc::vec;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    fn linear_in_theta(thetas: &[f64], times: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(times.len(), thetas.len(), |i, j| thetas[j] * (1.0 + (3.0 * times[i]).sin()))
    }

    #[test]
    fn rank_one_round_trip() {
        let times = grid(12);
        let thetas = [0.5, 1.0, 2.0, 3.5];
        let y = linear_in_theta(&thetas, &times);
        let params: Vec<Vec<f64>> = thetas.iter().map(|&t| vec![t]).collect();
        let emu = train_on(&times, &y, &params, &DataDrivenConfig::new(FactorMethod::Svd, 1)).unwrap();
        for (j, p) in params.iter().enumerate() {
            let got = emu.predict(p, &times).unwrap();
            for i in 0..times.len() {
                assert!((got[i] - y[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn midpoint_is_mean_of_rows() {
        let times = grid(5);
        let thetas = [1.0, 2.0, 3.0];
        let y = DMatrix::from_fn(5, 3, |i, j| thetas[j] * (i * i) as f64 + j as f64);
        let params: Vec<Vec<f64>> = thetas.iter().map(|&t| vec![t]).collect();
        let emu = train_on(&times, &y, &params, &DataDrivenConfig::new(FactorMethod::Svd, 2)).unwrap();
        let at = emu.predict(&[2.2], &times).unwrap();
        let mid = emu.predict(&[2.2], &[0.5 * (times[1] + times[2])]).unwrap();
        assert!((mid[0] - 0.5 * (at[1] + at[2])).abs() < 1e-12);
    }

    #[test]
    fn time_extrapolation_rejected() {
        let times = grid(5);
        let y = linear_in_theta(&[1.0, 2.0], &times);
        let emu = train_on(&times, &y, &[vec![1.0], vec![2.0]], &DataDrivenConfig::new(FactorMethod::Svd, 1)).unwrap();
        assert!(matches!(emu.predict(&[1.5], &[1.01]), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(emu.predict(&[1.5], &[-0.01]), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn linear_dataset_between_runs() {
        let times = grid(20);
        let thetas: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let y = linear_in_theta(&thetas, &times);
        let params: Vec<Vec<f64>> = thetas.iter().map(|&t| vec![t]).collect();
        let emu = train_on(&times, &y, &params, &DataDrivenConfig::new(FactorMethod::Svd, 2)).unwrap();
        for q in [1.5, 3.3, 5.8] {
            let got = emu.predict(&[q], &times).unwrap();
            let want = linear_in_theta(&[q], &times);
            let err = got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 0.02 * scale, "θ={q}: {err}");
        }
    }

    #[test]
    fn nmf_nonnegative_at_training_runs() {
        let times = grid(15);
        let thetas = [0.2, 0.5, 0.9, 1.4, 2.0];
        let y = DMatrix::from_fn(15, 5, |i, j| (-(times[i] - thetas[j] / 2.0).powi(2) * 8.0).exp() * thetas[j]);
        let params: Vec<Vec<f64>> = thetas.iter().map(|&t| vec![t]).collect();
        let emu = train_on(&times, &y, &params, &DataDrivenConfig::new(FactorMethod::Nmf, 3)).unwrap();
        assert!(emu.factor.basis.iter().chain(emu.factor.coeffs.iter()).all(|&v| v >= 0.0));
        for p in &params {
            let pred = emu.predict_detailed(p, &times, false).unwrap();
            assert!(!pred.negative_coefficients);
            assert!(pred.values.iter().all(|&v| v >= -1e-10));
        }
    }

    #[test]
    fn plain_prediction_matches_detailed_values() {
        let times = grid(15);
        let thetas = [0.2, 0.5, 0.9, 1.4, 2.0];
        let y = DMatrix::from_fn(15, 5, |i, j| (3.0 * times[i] * thetas[j]).sin() + thetas[j]);
        let params: Vec<Vec<f64>> = thetas.iter().map(|&t| vec![t]).collect();
        let query: Vec<f64> = (0..31).map(|i| i as f64 / 30.0).collect();
        for clip in [false, true] {
            let mut cfg = DataDrivenConfig::new(FactorMethod::Svd, 3);
            cfg.clip_negative = clip;
            let emu = train_on(&times, &y, &params, &cfg).unwrap();
            for th in [0.1, 0.7, 1.7, 2.6] {
                assert_eq!(emu.predict(&[th], &query).unwrap(), emu.predict_detailed(&[th], &query, false).unwrap().values);
            }
        }
    }

    proptest! {
        #[test]
        fn hinted_segment_search_agrees(steps in proptest::collection::vec(0.01f64..1.0, 2..20), ts in proptest::collection::vec(-0.1f64..1.1, 1..40), hint in 0usize..25) {
            let mut g = vec![0.0];
            for s in &steps {
                let next = g[g.len() - 1] + s;
                g.push(next);
            }
            let span = g[g.len() - 1];
            for &u in &ts {
                let t = u * span;
                match (time_weights(&g, t), time_weights_from(&g, t, hint)) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                    (Err(_), Err(_)) => {}
                    (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
                }
            }
            for &t in &g {
                prop_assert_eq!(time_weights(&g, t).unwrap(), time_weights_from(&g, t, hint).unwrap());
            }
        }
    }

    #[test]
    fn variance_collapses_at_training_inputs_and_grows_far_away() {
        let times = grid(10);
        let thetas = [0.0, 1.0, 2.0, 3.0];
        let y = DMatrix::from_fn(10, 4, |i, j| (thetas[j] * times[i]).sin() + thetas[j]);
        let params: Vec<Vec<f64>> = thetas.iter().map(|&t| vec![t]).collect();
        let emu = train_on(&times, &y, &params, &DataDrivenConfig::new(FactorMethod::Svd, 3)).unwrap();
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (_, v) = emu.predict_with_uncertainty(&[1.0], &times).unwrap();
        assert!(v.iter().all(|&x| (0.0..1e-8 * scale).contains(&x)));
        let far = emu.predict_detailed(&[40.0], &times, true).unwrap();
        assert!(far.outside_hull);
        // far from the data every coefficient variance returns to its prior
        let (_, beta_var) = emu.gp.predict_with_variance(&[40.0]).unwrap();
        for (k, bv) in beta_var.iter().enumerate() {
            assert!((bv - emu.gp.kernel(k).variance()).abs() < 1e-6 * emu.gp.kernel(k).variance());
        }
    }

    #[test]
    fn two_run_variance_matches_hand_propagation() {
        let times = [0.0, 1.0];
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 1.5]);
        let mut cfg = DataDrivenConfig::new(FactorMethod::Svd, 2);
        cfg.gp.optimize = false;
        cfg.gp.sharing = HyperSharing::Shared;
        let emu = train_on(&times, &y, &[vec![0.0], vec![1.0]], &cfg).unwrap();
        let (_, beta_var) = emu.gp.predict_with_variance(&[0.4]).unwrap();
        let (_, var) = emu.predict_with_uncertainty(&[0.4], &[0.25]).unwrap();
        let b = &emu.factor.basis;
        let phi = [0.75 * b[(0, 0)] + 0.25 * b[(1, 0)], 0.75 * b[(0, 1)] + 0.25 * b[(1, 1)]];
        let want = phi[0] * phi[0] * beta_var[0] + phi[1] * phi[1] * beta_var[1];
        assert!((var[0] - want).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn training_columns_within_truncation_error(seed in 0u64..1000, q in 1usize..4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let times = grid(8);
            let n = 5;
            let thetas: Vec<Vec<f64>> = (0..n).map(|j| vec![j as f64 + rng.random_range(0.0..0.5)]).collect();
            let y = DMatrix::from_fn(8, n, |_, _| rng.random_range(-1.0..1.0));
            let emu = train_on(&times, &y, &thetas, &DataDrivenConfig::new(FactorMethod::Svd, q)).unwrap();
            let recon = emu.factor.reconstruct();
            for (j, th) in thetas.iter().enumerate() {
                let got = emu.predict(th, &times).unwrap();
                for i in 0..8 {
                    let trunc = (recon[(i, j)] - y[(i, j)]).abs();
                    prop_assert!((got[i] - y[(i, j)]).abs() <= trunc + 1e-8);
                }
            }
        }

        #[test]
        fn grid_refinement_keeps_grid_values(theta in 0.0f64..4.0, extra in 1usize..5) {
            let times = grid(9);
            let y = DMatrix::from_fn(9, 4, |i, j| (j as f64 + 1.0) * times[i].powi(2) + (j as f64) * times[i]);
            let params: Vec<Vec<f64>> = (0..4).map(|j| vec![j as f64]).collect();
            let emu = train_on(&times, &y, &params, &DataDrivenConfig::new(FactorMethod::Svd, 2)).unwrap();
            let coarse = emu.predict(&[theta], &times).unwrap();
            let fine: Vec<f64> = (0..(8 * extra + 1)).map(|k| k as f64 / (8 * extra) as f64).collect();
            let refined = emu.predict(&[theta], &fine).unwrap();
            for (i, c) in coarse.iter().enumerate() {
                prop_assert!((refined[i * extra] - c).abs() < 1e-12 * c.abs().max(1.0));
            }
        }
    }
}
