//! Path ensembles, initial laws, batch statistics and the forward
//! exponential-integrator simulator.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::error::{invalid, Error, Result};
use crate::grid::UniformGrid;
use crate::operator::SpectralOperator;
use crate::rng::{Channel, KeyedRng, StepNormals};

/// Paths per batch for the batch-means standard error.
pub const BATCH: usize = 32;

/// Law of the initial condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Dirac {
        value: Vec<f64>,
    },
    /// Independent normal components.
    Gaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
}

impl InitialLaw {
    pub fn zero(dim: usize) -> Self {
        InitialLaw::Dirac { value: vec![0.0; dim] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            InitialLaw::Dirac { value } => value.len() == dim && value.iter().all(|v| v.is_finite()),
            InitialLaw::Gaussian { mean, std } => {
                mean.len() == dim
                    && std.len() == dim
                    && mean.iter().all(|v| v.is_finite())
                    && std.iter().all(|s| *s >= 0.0 && s.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!(
                "initial law does not fit dimension {dim} or is not finite"
            )))
        }
    }

    /// Draws the initial state of `replicate` from stream `slot`.
    pub fn sample(&self, rng: &KeyedRng, replicate: u64, slot: u32, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac { value } => out.copy_from_slice(value),
            InitialLaw::Gaussian { mean, std } => {
                let mut s = rng.stream(replicate, Channel::Initial(slot));
                for ((o, m), sd) in out.iter_mut().zip(mean).zip(std) {
                    *o = m + sd * s.next_normal();
                }
            }
        }
    }
}

/// Per-time second moments with batch-means standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub grid: UniformGrid,
    pub second_moment: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl MomentSeries {
    /// Largest estimate and the standard error at that time.
    pub fn sup(&self) -> (f64, f64) {
        let (k, m) =
            self.second_moment.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, &m)| if m > acc.1 { (k, m) } else { acc },
            );
        (m, self.stderr[k])
    }

    /// Mean and standard error of the time average over `range`.
    pub fn time_average(&self, range: Range<usize>) -> (f64, f64) {
        let n = range.len() as f64;
        let m = self.second_moment[range.clone()].iter().sum::<f64>() / n;
        // errors at nearby times are strongly correlated; the average error is bounded by the mean
        let s = self.stderr[range].iter().sum::<f64>() / n;
        (m, s)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "second_moment", "stderr"])?;
        for (k, (m, s)) in self.second_moment.iter().zip(&self.stderr).enumerate() {
            out.write_record([self.grid.time(k).to_string(), m.to_string(), s.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Contiguous path batches; single-path batches when there are too few paths for two full batches.
pub(crate) fn batch_ranges(n_paths: usize) -> Vec<Range<usize>> {
    let size = if n_paths >= 2 * BATCH { BATCH } else { 1 };
    (0..n_paths).step_by(size).map(|s| s..(s + size).min(n_paths)).collect()
}

/// Combines per-batch sums `(count, sums[n])` in batch order into means and standard errors.
pub(crate) fn reduce_batches(batches: &[(usize, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let n_steps = batches.first().map_or(0, |b| b.1.len());
    let total: usize = batches.iter().map(|b| b.0).sum();
    let nb = batches.len();
    let mut mean = vec![0.0; n_steps];
    for (_, sums) in batches {
        for (m, s) in mean.iter_mut().zip(sums) {
            *m += s;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);
    let mut err = vec![0.0; n_steps];
    if nb >= 2 {
        for (count, sums) in batches {
            let w = *count as f64 / total as f64;
            for ((e, s), m) in err.iter_mut().zip(sums).zip(&mean) {
                let d = s / *count as f64 - m;
                *e += w * w * d * d;
            }
        }
        let corr = nb as f64 / (nb - 1) as f64;
        err.iter_mut().for_each(|e| *e = (*e * corr).sqrt());
    }
    (mean, err)
}

/// Trajectories of one equation sampled on a grid.
#[derive(Clone, Debug)]
pub struct StochasticEnsemble {
    grid: UniformGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    /// Position in the keyed noise streams of the step leaving grid index 0.
    noise_offset: usize,
    initial_law: Option<InitialLaw>,
    /// Path-major: `states[(p * n + k) * dim + d]`.
    states: Vec<f64>,
}

impl StochasticEnsemble {
    pub(crate) fn from_parts(
        grid: UniformGrid,
        dim: usize,
        seed: u64,
        noise_offset: usize,
        initial_law: Option<InitialLaw>,
        states: Vec<f64>,
    ) -> Self {
        let n_paths = states.len() / (grid.n * dim);
        debug_assert_eq!(states.len(), n_paths * grid.n * dim);
        Self {
            grid,
            dim,
            n_paths,
            seed,
            noise_offset,
            initial_law,
            states,
        }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_offset(&self) -> usize {
        self.noise_offset
    }

    pub fn initial_law(&self) -> Option<&InitialLaw> {
        self.initial_law.as_ref()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.grid.n + k) * self.dim;
        &self.states[i..i + self.dim]
    }

    /// All path values at grid index `k`, row per path.
    pub fn slice_at(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths)
            .flat_map(|p| self.state(p, k).iter().copied())
            .collect()
    }

    /// Values at grid index `k` restricted to the first `components` coordinates.
    pub fn marginal_at(&self, k: usize, components: usize) -> Vec<f64> {
        (0..self.n_paths)
            .flat_map(|p| self.state(p, k)[..components].iter().copied())
            .collect()
    }

    /// `E|x(t)|^2` over the first `components` coordinates.
    pub fn second_moment_of(&self, components: usize) -> MomentSeries {
        self.moment_by(|p, k| self.state(p, k)[..components].iter().map(|v| v * v).sum())
    }

    pub fn second_moment(&self) -> MomentSeries {
        self.second_moment_of(self.dim)
    }

    /// `E|x(t) - y(t)|^2` for paths paired by index.
    pub fn mean_square_difference(&self, other: &StochasticEnsemble) -> Result<MomentSeries> {
        if !self.grid.matches(&other.grid) || self.dim != other.dim || self.n_paths != other.n_paths {
            return Err(Error::GridMismatch(
                "ensembles differ in grid, dimension or path count".into(),
            ));
        }
        Ok(self.moment_by(|p, k| {
            self.state(p, k)
                .iter()
                .zip(other.state(p, k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        }))
    }

    fn moment_by(&self, value: impl Fn(usize, usize) -> f64 + Sync) -> MomentSeries {
        let n = self.grid.n;
        let batches: Vec<(usize, Vec<f64>)> = batch_ranges(self.n_paths)
            .into_par_iter()
            .map(|r| {
                let mut sums = vec![0.0; n];
                for p in r.clone() {
                    for (k, s) in sums.iter_mut().enumerate() {
                        *s += value(p, k);
                    }
                }
                (r.len(), sums)
            })
            .collect();
        let (second_moment, stderr) = reduce_batches(&batches);
        MomentSeries {
            grid: self.grid,
            second_moment,
            stderr,
        }
    }

    /// Wide CSV: `t, p0_v1, .., p0_vd, p1_v1, ...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for p in 0..self.n_paths {
            for d in 0..self.dim {
                header.push(format!("p{p}_v{}", d + 1));
            }
        }
        out.write_record(&header)?;
        for k in 0..self.grid.n {
            let mut row = vec![self.grid.time(k).to_string()];
            for p in 0..self.n_paths {
                row.extend(self.state(p, k).iter().map(|v| v.to_string()));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parameters shared by forward simulations.
#[derive(Clone, Copy, Debug)]
pub struct ForwardSpec<'a> {
    pub op: &'a SpectralOperator,
    pub drift: &'a CoefficientField,
    pub diffusion: &'a CoefficientField,
    pub grid: UniformGrid,
    pub n_paths: usize,
    pub seed: u64,
    /// Noise steps skipped before grid index 0, for alignment with another run.
    pub noise_offset: usize,
}

impl ForwardSpec<'_> {
    fn check(&self) -> Result<()> {
        let d = self.op.dim();
        if self.drift.dim() != d || self.diffusion.dim() != d {
            return Err(invalid(format!(
                "coefficient dimensions ({}, {}) do not match operator dimension {d}",
                self.drift.dim(),
                self.diffusion.dim()
            )));
        }
        if self.n_paths == 0 {
            return Err(invalid("ensemble needs at least one path"));
        }
        Ok(())
    }
}

/// Mild-solution ensemble started at the first grid time from `initial`.
///
/// Each step applies the exact semigroup decay per mode, the drift frozen at
/// the left endpoint through `(1 - e^{-lambda h}) / lambda`, and the diffusion
/// frozen at the left endpoint against the exact stochastic convolution.
pub fn euler_maruyama_ensemble(spec: &ForwardSpec, initial: &InitialLaw) -> Result<StochasticEnsemble> {
    let mut v = coupled_ensembles(spec, std::slice::from_ref(initial))?;
    Ok(v.pop().expect("one ensemble"))
}

/// Ensembles from several initial laws driven by the same noise path by path.
pub fn coupled_ensembles(spec: &ForwardSpec, initials: &[InitialLaw]) -> Result<Vec<StochasticEnsemble>> {
    spec.check()?;
    let dim = spec.op.dim();
    for law in initials {
        law.validate(dim)?;
    }
    let n = spec.grid.n;
    let kernel = spec.op.step_kernel(spec.grid.h);
    let rng = KeyedRng::new(spec.seed);
    let m = initials.len();

    let per_path: Vec<Result<Vec<f64>>> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut out = vec![0.0; m * n * dim];
            let mut normals = StepNormals::new(&rng, p as u64, kernel.channels());
            normals.skip(spec.noise_offset);
            let mut z = vec![0.0; kernel.channels()];
            let mut conv = vec![0.0; dim];
            let mut fx = vec![0.0; dim];
            let mut gx = vec![0.0; dim];
            let mut xs: Vec<Vec<f64>> = vec![vec![0.0; dim]; m];
            for (j, law) in initials.iter().enumerate() {
                law.sample(&rng, p as u64, j as u32, &mut xs[j]);
                out[j * n * dim..j * n * dim + dim].copy_from_slice(&xs[j]);
            }
            for k in 0..n - 1 {
                let t = spec.grid.time(k);
                normals.fill(&mut z);
                kernel.correlate(&z, &mut conv);
                for (j, x) in xs.iter_mut().enumerate() {
                    spec.drift.eval_checked(t, x, &mut fx)?;
                    spec.diffusion.eval_checked(t, x, &mut gx)?;
                    kernel.advance_frozen(x, &fx, &gx, &conv);
                    if !x.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFinite { path: p, step: k + 1 });
                    }
                    let at = (j * n + k + 1) * dim;
                    out[at..at + dim].copy_from_slice(x);
                }
            }
            Ok(out)
        })
        .collect();

    let mut states: Vec<Vec<f64>> = (0..m).map(|_| Vec::with_capacity(spec.n_paths * n * dim)).collect();
    for r in per_path {
        let buf = r?;
        for (j, s) in states.iter_mut().enumerate() {
            s.extend_from_slice(&buf[j * n * dim..(j + 1) * n * dim]);
        }
    }
    Ok(states
        .into_iter()
        .zip(initials)
        .map(|(s, law)| {
            StochasticEnsemble::from_parts(spec.grid, dim, spec.seed, spec.noise_offset, Some(law.clone()), s)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::FieldConstants;

    fn const_field(v: f64) -> CoefficientField {
        CoefficientField::constant(vec![v]).unwrap()
    }

    #[test]
    fn pure_decay_is_exact() {
        let op = SpectralOperator::new(vec![2.0, 7.0], 1.0, 2.0).unwrap();
        let zero = CoefficientField::zero(2);
        let grid = UniformGrid::new(0.0, 0.01, 101).unwrap();
        let spec = ForwardSpec {
            op: &op,
            drift: &zero,
            diffusion: &zero,
            grid,
            n_paths: 3,
            seed: 1,
            noise_offset: 0,
        };
        let e = euler_maruyama_ensemble(&spec, &InitialLaw::Dirac { value: vec![1.0, -2.0] }).unwrap();
        let x = e.state(2, 100);
        assert!((x[0] - (-2.0f64).exp()).abs() < 1e-14);
        assert!((x[1] + 2.0 * (-7.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn ou_variance_builds_up() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let (f, g) = (const_field(0.0), const_field(1.0));
        let grid = UniformGrid::new(0.0, 0.01, 41).unwrap();
        let spec = ForwardSpec {
            op: &op,
            drift: &f,
            diffusion: &g,
            grid,
            n_paths: 4000,
            seed: 3,
            noise_offset: 0,
        };
        let e = euler_maruyama_ensemble(&spec, &InitialLaw::zero(1)).unwrap();
        let m = e.second_moment();
        for k in [10, 20, 40] {
            let t = grid.time(k);
            let exact = (1.0 - (-10.0 * t).exp()) / 10.0;
            assert!((m.second_moment[k] - exact).abs() < 4.0 * m.stderr[k], "t={t}");
        }
    }

    #[test]
    fn coupling_shares_noise() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let f = CoefficientField::scalar("lin", FieldConstants::default(), |_, x| 0.0 * x).unwrap();
        let g = const_field(1.0);
        let grid = UniformGrid::new(0.0, 0.01, 51).unwrap();
        let spec = ForwardSpec {
            op: &op,
            drift: &f,
            diffusion: &g,
            grid,
            n_paths: 16,
            seed: 9,
            noise_offset: 0,
        };
        let laws = [
            InitialLaw::Dirac { value: vec![1.0] },
            InitialLaw::Dirac { value: vec![-1.0] },
        ];
        let v = coupled_ensembles(&spec, &laws).unwrap();
        // additive noise: the difference is deterministic
        let d = v[0].mean_square_difference(&v[1]).unwrap();
        let exact = 4.0 * (-2.0 * 5.0 * 0.5f64).exp();
        assert!((d.second_moment[50] - exact).abs() < 1e-12);
        assert!(d.stderr[50] < 1e-12);
    }

    #[test]
    fn noise_offset_aligns_streams() {
        let op = SpectralOperator::scalar(1.0).unwrap();
        let (f, g) = (const_field(0.0), const_field(1.0));
        let long = UniformGrid::new(0.0, 0.1, 21).unwrap();
        let base = ForwardSpec {
            op: &op,
            drift: &f,
            diffusion: &g,
            grid: long,
            n_paths: 2,
            seed: 5,
            noise_offset: 0,
        };
        let a = euler_maruyama_ensemble(&base, &InitialLaw::zero(1)).unwrap();
        let start = a.state(1, 10)[0];
        let tail = ForwardSpec {
            grid: long.subgrid(10, 1).unwrap(),
            noise_offset: 10,
            ..base
        };
        let b = euler_maruyama_ensemble(&tail, &InitialLaw::Dirac { value: vec![start] }).unwrap();
        assert!((b.state(1, 10)[0] - a.state(1, 20)[0]).abs() < 1e-14);
    }

    #[test]
    fn batch_reduction_matches_direct_formula() {
        let batches = vec![(2, vec![2.0]), (2, vec![6.0]), (2, vec![4.0])];
        let (m, e) = reduce_batches(&batches);
        assert!((m[0] - 2.0).abs() < 1e-15);
        // batch means 1, 3, 2: sample sd 1, stderr 1/sqrt(3)
        assert!((e[0] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_state_reported() {
        let op = SpectralOperator::scalar(1.0).unwrap();
        let f = CoefficientField::scalar("blow", FieldConstants::default(), |_, x| 1e300 * (1.0 + x * x)).unwrap();
        let g = const_field(0.0);
        let spec = ForwardSpec {
            op: &op,
            drift: &f,
            diffusion: &g,
            grid: UniformGrid::new(0.0, 0.5, 10).unwrap(),
            n_paths: 1,
            seed: 0,
            noise_offset: 0,
        };
        let err = euler_maruyama_ensemble(&spec, &InitialLaw::zero(1)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { path: 0, .. } | Error::Evaluator(_)));
    }
}
