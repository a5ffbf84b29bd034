//! Deterministic vector-valued functions of time, sampled on a uniform grid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::UniformGrid;

/// A function of time with values in `R^dim`.
pub trait Signal: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, out: &mut [f64]);
}

/// Adapter turning a closure into a [`Signal`].
pub struct FnSignal<F> {
    dim: usize,
    f: F,
}

impl<F> FnSignal<F>
where
    F: Fn(f64, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Signal for FnSignal<F>
where
    F: Fn(f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        (self.f)(t, out)
    }
}

/// Scalar closure signal.
pub fn scalar_signal<F>(f: F) -> FnSignal<impl Fn(f64, &mut [f64]) + Send + Sync>
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    FnSignal::new(1, move |t, out: &mut [f64]| out[0] = f(t))
}

/// A signal shifted in time: `t -> inner(t + shift)`.
pub struct Shifted<'a> {
    pub inner: &'a dyn Signal,
    pub shift: f64,
}

impl Signal for Shifted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        self.inner.eval(t + self.shift, out)
    }
}

/// Row-major `n x dim` samples on a [`UniformGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathJson", into = "PathJson")]
pub struct SampledPath {
    grid: UniformGrid,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PathJson {
    grid: UniformGrid,
    dim: usize,
    values: Vec<Vec<f64>>,
}

impl From<SampledPath> for PathJson {
    fn from(p: SampledPath) -> Self {
        let values = p.values.chunks(p.dim).map(<[f64]>::to_vec).collect();
        Self {
            grid: p.grid,
            dim: p.dim,
            values,
        }
    }
}

impl TryFrom<PathJson> for SampledPath {
    type Error = Error;

    fn try_from(j: PathJson) -> Result<Self> {
        if j.values.iter().any(|row| row.len() != j.dim) {
            return Err(invalid("row length differs from dim"));
        }
        SampledPath::new(j.grid, j.dim, j.values.concat())
    }
}

impl SampledPath {
    pub fn new(grid: UniformGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("path dimension must be positive"));
        }
        if values.len() != grid.n * dim {
            return Err(invalid(format!(
                "expected {} x {} values, got {}",
                grid.n,
                dim,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample at row {}", k / dim)));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_signal(signal: &dyn Signal, grid: UniformGrid) -> Result<Self> {
        let dim = signal.dim();
        let mut values = vec![0.0; grid.n * dim];
        for (k, row) in values.chunks_mut(dim).enumerate() {
            signal.eval(grid.time(k), row);
        }
        Self::new(grid, dim, values)
    }

    pub fn from_scalar_fn(grid: UniformGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, 1, grid.times().map(f).collect())
    }

    pub fn constant(grid: UniformGrid, value: &[f64]) -> Result<Self> {
        Self::new(grid, value.len(), value.repeat(grid.n))
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    /// Piecewise-linear value at `t`, or `None` outside the grid.
    pub fn value_at(&self, t: f64, out: &mut [f64]) -> Option<()> {
        if !self.grid.contains(t) {
            return None;
        }
        self.interpolate(t, out);
        Some(())
    }

    fn interpolate(&self, t: f64, out: &mut [f64]) {
        let x = ((t - self.grid.t0) / self.grid.h).clamp(0.0, (self.grid.n - 1) as f64);
        let k = (x.floor() as usize).min(self.grid.n - 2);
        let w = x - k as f64;
        let (a, b) = (self.row(k), self.row(k + 1));
        for ((o, &va), &vb) in out.iter_mut().zip(a).zip(b) {
            *o = va + w * (vb - va);
        }
    }

    /// Largest Euclidean norm over the samples.
    pub fn sup_norm(&self) -> f64 {
        self.rows().map(norm).fold(0.0, f64::max)
    }

    /// `t -> path(t + shift_steps h)` on the overlapping grid.
    pub fn translate(&self, shift_steps: isize) -> Result<Self> {
        let s = shift_steps.unsigned_abs();
        if s >= self.grid.n - 1 {
            return Err(invalid(format!(
                "shift of {shift_steps} steps exceeds path of {} samples",
                self.grid.n
            )));
        }
        let n = self.grid.n - s;
        let d = self.dim;
        let (t0, src) = if shift_steps >= 0 {
            (self.grid.t0, &self.values[s * d..])
        } else {
            (self.grid.time(s), &self.values[..n * d])
        };
        Self::new(UniformGrid::new(t0, self.grid.h, n)?, d, src.to_vec())
    }

    /// Restrict to the grid points from index `start` on, keeping every `stride`-th.
    pub fn resample(&self, start: usize, stride: usize) -> Result<Self> {
        let grid = self.grid.subgrid(start, stride)?;
        let values = (0..grid.n)
            .flat_map(|k| self.row(start + k * stride).iter().copied())
            .collect();
        Self::new(grid, self.dim, values)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("v{i}")));
        wtr.write_record(&header)?;
        for (k, row) in self.rows().enumerate() {
            let mut rec = vec![self.grid.time(k).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`SampledPath::write_csv`]; times must be uniform.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let dim = rdr.headers()?.len().saturating_sub(1);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut fields = rec.iter().map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad number {s:?}: {e}")))
            });
            times.push(fields.next().ok_or_else(|| invalid("empty CSV row"))??);
            for f in fields {
                values.push(f?);
            }
        }
        if times.len() < 2 {
            return Err(invalid("CSV path needs at least two rows"));
        }
        let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        let grid = UniformGrid::new(times[0], h, times.len())?;
        for (k, &t) in times.iter().enumerate() {
            if (t - grid.time(k)).abs() > 1e-6 * h {
                return Err(invalid(format!("CSV times are not uniform at row {k}")));
            }
        }
        Self::new(grid, dim, values)
    }
}

impl Signal for SampledPath {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Piecewise-linear interpolation, held constant beyond the grid ends.
    fn eval(&self, t: f64, out: &mut [f64]) {
        self.interpolate(t, out)
    }
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(h: f64) -> SampledPath {
        let g = UniformGrid::spanning(-20.0, 20.0, h).unwrap();
        SampledPath::from_scalar_fn(g, f64::sin).unwrap()
    }

    #[test]
    fn zero_shift_is_identity() {
        let p = sine(0.01);
        assert_eq!(p.translate(0).unwrap(), p);
    }

    #[test]
    fn shift_exceeding_length_fails() {
        let p = sine(0.5);
        assert!(p.translate(p.len() as isize).is_err());
        assert!(p.translate(-(p.len() as isize)).is_err());
    }

    #[test]
    fn sine_shifted_by_period() {
        let h = 0.01;
        let p = sine(h);
        let steps = (2.0 * std::f64::consts::PI / h).round() as isize;
        let q = p.translate(steps).unwrap();
        let max_dev = q
            .rows()
            .zip(p.rows())
            .map(|(a, b)| (a[0] - b[0]).abs())
            .fold(0.0, f64::max);
        assert!(max_dev <= h, "deviation {max_dev}");
    }

    #[test]
    fn constant_path_is_shift_invariant() {
        let g = UniformGrid::new(0.0, 0.1, 50).unwrap();
        let p = SampledPath::constant(g, &[1.5, -2.0]).unwrap();
        let q = p.translate(-7).unwrap();
        assert!(q.values().chunks(2).all(|r| r == [1.5, -2.0]));
    }

    #[test]
    fn json_layout() {
        let g = UniformGrid::new(0.0, 0.5, 2).unwrap();
        let p = SampledPath::new(g, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(
            s,
            r#"{"grid":{"t0":0.0,"h":0.5,"n":2},"dim":2,"values":[[1.0,2.0],[3.0,4.0]]}"#
        );
        assert_eq!(serde_json::from_str::<SampledPath>(&s).unwrap(), p);
    }

    #[test]
    fn csv_roundtrip() {
        let p = sine(0.25);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,v1\n"));
        let q = SampledPath::read_csv(buf.as_slice()).unwrap();
        assert!(q.grid().matches(p.grid()));
        assert_eq!(q.values(), p.values());
    }

    #[test]
    fn rejects_non_finite() {
        let g = UniformGrid::new(0.0, 1.0, 2).unwrap();
        assert!(SampledPath::new(g, 1, vec![0.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn translation_composes(a in -40isize..40, b in -40isize..40) {
            let p = sine(0.1);
            let ab = p.translate(a).unwrap().translate(b).unwrap();
            let direct = p.translate(a + b).unwrap();
            // compare on the common time range
            let mut x = [0.0];
            let mut y = [0.0];
            for (k, t) in ab.grid().times().enumerate() {
                if direct.value_at(t, &mut y).is_some() {
                    x[0] = ab.row(k)[0];
                    prop_assert!((x[0] - y[0]).abs() < 1e-12);
                }
            }
        }
    }
}
