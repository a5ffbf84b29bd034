use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform time grid `t_k = t0 + k h`, `k = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct UniformGrid {
    pub t0: f64,
    pub h: f64,
    pub n: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    t0: f64,
    h: f64,
    n: usize,
}

impl TryFrom<RawGrid> for UniformGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        UniformGrid::new(raw.t0, raw.h, raw.n)
    }
}

impl UniformGrid {
    pub fn new(t0: f64, h: f64, n: usize) -> Result<Self> {
        if !t0.is_finite() {
            return Err(invalid("grid origin must be finite"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("grid step must be positive, got {h}")));
        }
        if n < 2 {
            return Err(invalid(format!("grid needs at least 2 samples, got {n}")));
        }
        Ok(Self { t0, h, n })
    }

    /// Grid from `start` to (approximately) `end` with step `h`; the last
    /// point is `start + round((end - start)/h) h`.
    pub fn spanning(start: f64, end: f64, h: f64) -> Result<Self> {
        if !(end > start) {
            return Err(invalid(format!("empty time span [{start}, {end}]")));
        }
        if !(h > 0.0) {
            return Err(invalid(format!("grid step must be positive, got {h}")));
        }
        let steps = ((end - start) / h).round() as usize;
        Self::new(start, h, steps.max(1) + 1)
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |k| self.time(k))
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-9 * self.h;
        t >= self.t0 - slack && t <= self.t_end() + slack
    }

    /// Index of the grid point equal to `t` (up to `1e-6 h`), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if !self.contains(t) {
            return None;
        }
        let x = (t - self.t0) / self.h;
        let k = x.round();
        ((x - k).abs() <= 1e-6).then(|| (k as usize).min(self.n - 1))
    }

    /// Whether two grids describe the same sample times.
    pub fn matches(&self, other: &UniformGrid) -> bool {
        let scale = self.h.abs().max(other.h.abs());
        self.n == other.n && (self.h - other.h).abs() <= 1e-12 * scale && (self.t0 - other.t0).abs() <= 1e-9 * scale
    }

    /// Sub-grid starting at index `start` keeping every `stride`-th point.
    pub fn subgrid(&self, start: usize, stride: usize) -> Result<Self> {
        if stride == 0 || start >= self.n {
            return Err(invalid("bad subgrid request"));
        }
        let n = (self.n - 1 - start) / stride + 1;
        Self::new(self.time(start), self.h * stride as f64, n)
    }
}

pub(crate) fn check_same_grid(a: &UniformGrid, b: &UniformGrid, what: &str) -> Result<()> {
    if a.matches(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{what}: (t0={}, h={}, n={}) vs (t0={}, h={}, n={})",
            a.t0, a.h, a.n, b.t0, b.h, b.n
        )))
    }
}
