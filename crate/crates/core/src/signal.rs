//! Piecewise-constant scalar signals (block rain, constant forcing).

use alloc::vec::Vec;

/// `value(t) = values[k]` for `starts[k] <= t < starts[k+1]`, the last value
/// extends to infinity, and the signal is zero before `starts[0]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PiecewiseConstant {
    starts: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    /// Builds a signal from `(start, value)` pairs; starts must increase.
    /// Adjacent segments with equal values are merged.
    pub fn new(segments: &[(f64, f64)]) -> Self {
        let mut starts = Vec::with_capacity(segments.len());
        let mut values: Vec<f64> = Vec::with_capacity(segments.len());
        for &(s, v) in segments {
            if values.last() == Some(&v) {
                continue;
            }
            debug_assert!(starts.last().is_none_or(|&p| s > p));
            starts.push(s);
            values.push(v);
        }
        Self { starts, values }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(&[(0.0, value)])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// A single block of `height` on `[start, end)`.
    pub fn block(start: f64, end: f64, height: f64) -> Self {
        if start <= 0.0 {
            Self::new(&[(0.0, height), (end, 0.0)])
        } else {
            Self::new(&[(0.0, 0.0), (start, height), (end, 0.0)])
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.starts.iter().rposition(|&s| s <= t) {
            Some(k) => self.values[k],
            None => 0.0,
        }
    }

    /// Breakpoints strictly inside `(a, b)`.
    pub fn breaks_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.starts.iter().copied().filter(move |&s| s > a && s < b)
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.starts.iter().copied().zip(self.values.iter().copied())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { starts: self.starts.clone(), values: self.values.iter().map(|v| v * factor).collect() }
    }

    /// `∫₀ᵗ value(τ) dτ`.
    pub fn integral(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for (k, (&s, &v)) in self.starts.iter().zip(&self.values).enumerate() {
            if s >= t {
                break;
            }
            let end = self.starts.get(k + 1).copied().unwrap_or(f64::INFINITY).min(t);
            total += v * (end - s.max(0.0)).max(0.0);
        }
        total
    }
}
