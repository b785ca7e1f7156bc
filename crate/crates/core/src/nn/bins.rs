use serde::{Deserialize, Serialize};

/// Uniform partition of `[lo, hi]` into `n` bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl BinGrid {
    /// 100 bins of 5 m over the release-x range.
    pub fn release_x() -> Self {
        Self { lo: -500.0, hi: 0.0, n: 100 }
    }

    /// 100 bins of 5 m over the release-y range.
    pub fn release_y() -> Self {
        Self { lo: -250.0, hi: 250.0, n: 100 }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        self.lo + (j as f64 + 0.5) * self.width()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.midpoint(j)).collect()
    }

    /// Bin containing `x`; values outside the range go to the end bins.
    pub fn index_of(&self, x: f64) -> usize {
        let j = ((x - self.lo) / self.width()).floor();
        if j < 0.0 {
            0
        } else {
            (j as usize).min(self.n - 1)
        }
    }
}

/// Probability-weighted mean of the bin midpoints.
pub fn binned_expectation(probs: &[f64], bins: &BinGrid) -> f64 {
    probs.iter().enumerate().map(|(j, p)| p * bins.midpoint(j)).sum()
}
