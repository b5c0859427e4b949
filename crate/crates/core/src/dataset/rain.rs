use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::signal::PiecewiseConstant;
use crate::{Error, Result};

/// Uniform time grid `start + k·step`, `k = 0..len`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.start + self.step * k as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || self.len < 2 || !self.start.is_finite() {
            return Err(Error::config("time grid needs step > 0 and at least two points"));
        }
        Ok(())
    }
}

/// Block rain: constant `intensity` (mm/h) for `duration` (min) from `start` (min).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RainEvent {
    pub intensity: f64,
    pub duration: f64,
    pub start: f64,
}

impl RainEvent {
    pub fn new(intensity: f64, duration: f64) -> Self {
        Self { intensity, duration, start: 0.0 }
    }
}

/// Rain sampled per grid cell `[t_k, t_k + step)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RainSeries {
    pub values: Vec<f64>,
    pub first_cell: usize,
    pub cells: usize,
    /// Set when the duration was shorter than one grid step and the event was
    /// widened to a single cell.
    pub sub_grid_pulse: bool,
}

impl RainSeries {
    /// The same series as a continuous-time signal (grid time units).
    pub fn as_signal(&self, grid: &TimeGrid) -> PiecewiseConstant {
        if self.cells == 0 {
            return PiecewiseConstant::zero();
        }
        let height = self.values[self.first_cell];
        let start = grid.start + grid.step * self.first_cell as f64;
        let end = start + grid.step * self.cells as f64;
        PiecewiseConstant::block(start - grid.start, end - grid.start, height)
    }
}

/// Block rain on `grid`: the cell containing `start` and the following
/// `round(duration/step) − 1` cells carry `intensity`, all others are zero.
pub fn generate_block_rain(event: &RainEvent, grid: &TimeGrid) -> Result<RainSeries> {
    grid.validate()?;
    if !(event.intensity > 0.0) || !(event.duration > 0.0) {
        return Err(Error::config("rain intensity and duration must be positive"));
    }
    let offset = (event.start - grid.start) / grid.step;
    if offset < -1e-9 {
        return Err(Error::config("rain starts before the grid"));
    }
    let first_cell = (offset + 1e-9).floor() as usize;
    let ratio = event.duration / grid.step;
    let sub_grid_pulse = ratio < 1.0;
    let cells = (ratio.round() as usize).max(1).min(grid.len.saturating_sub(first_cell));
    let mut values = alloc::vec![0.0; grid.len];
    for v in values.iter_mut().skip(first_cell).take(cells) {
        *v = event.intensity;
    }
    Ok(RainSeries { values, first_cell, cells, sub_grid_pulse })
}
