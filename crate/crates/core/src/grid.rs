use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when counting lattice points, so that `end` survives rounding
/// in `(end - start) / step`.
const COUNT_SLACK: f64 = 1e-9;

/// Uniform discretization `start, start + step, ...` up to `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must be finite (start {start}, end {end}, step {step})"
            )));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("grid step must be positive, got {step}")));
        }
        if start > end {
            return Err(Error::InvalidParameter(format!("grid start {start} exceeds end {end}")));
        }
        Ok(GridSpec { start, end, step })
    }

    /// A single point.
    pub fn point_grid(x: f64) -> Self {
        GridSpec { start: x, end: x, step: 1.0 }
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start) / self.step + COUNT_SLACK).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// The lattice points of `self` inside `[lo, hi]`, as a grid sharing the
    /// same step. `None` when no point falls inside.
    pub fn restrict(&self, lo: f64, hi: f64) -> Option<GridSpec> {
        let first = ((lo - self.start) / self.step - COUNT_SLACK).ceil().max(0.0) as usize;
        let last_f = ((hi - self.start) / self.step + COUNT_SLACK).floor();
        if last_f < 0.0 {
            return None;
        }
        let last = (last_f as usize).min(self.len() - 1);
        if first > last {
            return None;
        }
        Some(GridSpec { start: self.point(first), end: self.point(last), step: self.step })
    }

    /// Same interval at half the step.
    pub fn refined(&self) -> GridSpec {
        GridSpec { step: self.step / 2.0, ..*self }
    }
}
