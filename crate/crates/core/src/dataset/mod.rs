//! Time-series datasets: generators for the didactic nonlinear system and
//! the toy catchment, time subsampling and train/test splitting.

mod catchment;
mod nonlinear_ds;
mod rain;

pub use catchment::{
    generate_catchment_dataset, simulate_toy_catchment, simulate_with_rain, CatchmentDesign, CatchmentRun, ToyCatchmentConfig,
};
pub use nonlinear_ds::{generate_nonlinear_ds, NonlinearDs, NonlinearDsConfig};
pub use rain::{generate_block_rain, RainEvent, RainSeries, TimeGrid};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::check_len;
use crate::{Error, Result};

/// Train/test partition of the run (column) indices. Indices are zero-based
/// and sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Simulator outputs sampled on a common time grid: one column per run,
/// one parameter vector per run.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    times: Vec<f64>,
    outputs: DMatrix<f64>,
    params: Vec<Vec<f64>>,
    param_names: Vec<String>,
    split: Option<Split>,
    /// Free-form provenance (generator, quadrature rule, warnings, ...).
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeriesDataset {
    pub fn new(
        times: Vec<f64>,
        outputs: DMatrix<f64>,
        params: Vec<Vec<f64>>,
        param_names: Vec<String>,
    ) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::config("a dataset needs at least two time points"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("times must be strictly increasing"));
        }
        crate::error::check_finite("times", &times)?;
        check_len("output rows vs times", times.len(), outputs.nrows())?;
        check_len("parameter vectors vs output columns", outputs.ncols(), params.len())?;
        if !outputs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("outputs"));
        }
        let dim = params.first().map_or(0, Vec::len);
        for p in &params {
            check_len("parameter vector length", dim, p.len())?;
            crate::error::check_finite("parameters", p)?;
        }
        check_len("parameter names", dim, param_names.len())?;
        Ok(Self { times, outputs, params, param_names, split: None, metadata: BTreeMap::new() })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_runs(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.outputs.column(j).iter().copied().collect()
    }

    /// Output columns restricted to `indices`, in that order.
    pub fn select_columns(&self, indices: &[usize]) -> DMatrix<f64> {
        self.outputs.select_columns(indices)
    }

    pub fn select_params(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.params[i].clone()).collect()
    }

    /// Attaches a split after checking that it partitions the runs.
    pub fn with_split(mut self, split: Split) -> Result<Self> {
        let n = self.n_runs();
        let mut seen = alloc::vec![false; n];
        for &i in split.train.iter().chain(&split.test) {
            if i >= n || seen[i] {
                return Err(Error::config("split indices must partition the runs"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::config("split indices must cover every run"));
        }
        self.split = Some(split);
        Ok(self)
    }

    /// The split, or an error naming the operation that needed it.
    pub fn require_split(&self) -> Result<&Split> {
        self.split.as_ref().ok_or_else(|| Error::config("dataset has no train/test split"))
    }
}

/// Keeps only the time rows in `keep` (sorted, distinct, in range).
pub fn subsample_times(ds: &TimeSeriesDataset, keep: &[usize]) -> Result<TimeSeriesDataset> {
    if keep.is_empty() {
        return Err(Error::config("empty time selection"));
    }
    if keep.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("time selection must be sorted and distinct"));
    }
    if let Some(&last) = keep.last() {
        if last >= ds.n_times() {
            return Err(Error::config("time selection index out of range"));
        }
    }
    let times: Vec<f64> = keep.iter().map(|&i| ds.times[i]).collect();
    if times.len() < 2 {
        return Err(Error::config("time selection must keep at least two points"));
    }
    let outputs = ds.outputs.select_rows(keep);
    Ok(TimeSeriesDataset {
        times,
        outputs,
        params: ds.params.clone(),
        param_names: ds.param_names.clone(),
        split: ds.split.clone(),
        metadata: ds.metadata.clone(),
    })
}

/// `count` indices spread evenly over `0..n` including both ends.
pub fn evenly_spaced_indices(n: usize, count: usize) -> Vec<usize> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![0],
        _ => {
            let mut out: Vec<usize> = (0..count)
                .map(|i| libm::round(i as f64 * (n - 1) as f64 / (count - 1) as f64) as usize)
                .collect();
            out.dedup();
            out
        }
    }
}

/// Random train/test split, deterministic in `seed` (ChaCha8 stream).
pub fn split_dataset(ds: &TimeSeriesDataset, n_train: usize, seed: u64) -> Result<TimeSeriesDataset> {
    let n = ds.n_runs();
    if n_train == 0 || n_train >= n {
        return Err(Error::config(alloc::format!(
            "n_train = {n_train} must satisfy 1 <= n_train < {n}"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    ds.clone().with_split(Split { train, test, seed })
}
