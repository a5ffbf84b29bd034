//! The Green operator of the linear equation `dx = (Ax + f(t)) dt + g(t) dW`
//! and its a-priori bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{batch_ranges, reduce_batches, MomentSeries, StochasticEnsemble};
use crate::error::{invalid, Error, Result};
use crate::grid::UniformGrid;
use crate::law::{uniform_law_distance, LawDistanceSeries, NoiseFloor};
use crate::operator::{SpectralOperator, StepKernel};
use crate::path::{SampledPath, Shifted, Signal};
use crate::rng::{derive_seed, Channel, KeyedRng, StepNormals};

/// One Brownian realization on a grid, addressed by `(seed, replicate)`.
///
/// The increments are generated on demand from the keyed streams; the
/// stochastic convolutions used by the integrators come from the same
/// streams, so a `NoisePath` identifies the full noise input of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub grid: UniformGrid,
    pub seed: u64,
    pub replicate: u64,
}

impl NoisePath {
    pub fn new(grid: UniformGrid, seed: u64, replicate: u64) -> Self {
        Self { grid, seed, replicate }
    }

    /// `W(t_{k+1}) - W(t_k)` for `k = 0..n-1`.
    pub fn increments(&self) -> Vec<f64> {
        let mut s = KeyedRng::new(self.seed).stream(self.replicate, Channel::Noise(0));
        let sd = self.grid.h.sqrt();
        (0..self.grid.n - 1).map(|_| sd * s.next_normal()).collect()
    }
}

/// Result of [`green_apply`] on the output window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenOutput {
    pub realization: SampledPath,
    pub moments: MomentSeries,
    pub burn_in: f64,
    /// Bound on the L2 effect of starting from zero `burn_in` before the window.
    pub truncation_bound: f64,
}

/// `(N / nu) sqrt(2 |f|^2 + nu |g|^2)` with `|.|` the sup of second-moment norms.
pub fn sup_norm_bound(op: &SpectralOperator, f_sup2: f64, g_sup2: f64) -> Result<f64> {
    if !(f_sup2 >= 0.0 && g_sup2 >= 0.0) {
        return Err(invalid("squared sup norms must be nonnegative"));
    }
    let (n, nu) = (op.stability_constant(), op.stability_rate());
    Ok(n / nu * (2.0 * f_sup2 + nu * g_sup2).sqrt())
}

/// Bound on `max_{|t| <= big_l} E|phi(t)|^2` from the input moments on `[-l, l]`
/// and the global sups.
pub fn windowed_moment_bound(
    op: &SpectralOperator,
    f_window2: f64,
    g_window2: f64,
    f_sup2: f64,
    g_sup2: f64,
    big_l: f64,
    l: f64,
) -> Result<f64> {
    if !(big_l > 0.0 && l > big_l) {
        return Err(invalid(format!("need l > L > 0, got L = {big_l}, l = {l}")));
    }
    if [f_window2, g_window2, f_sup2, g_sup2].iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("moments must be nonnegative"));
    }
    let (n, nu) = (op.stability_constant(), op.stability_rate());
    let c = n * n / (nu * nu);
    let gap = l - big_l;
    Ok(c * (2.0 * f_window2 + nu * g_window2)
        + c * (2.0 * (-nu * gap).exp() * f_sup2 + nu * (-2.0 * nu * gap).exp() * g_sup2))
}

fn check_inputs(op: &SpectralOperator, f: &SampledPath, g: &SampledPath, burn_in: f64) -> Result<usize> {
    let d = op.dim();
    if f.dim() != d || g.dim() != d {
        return Err(invalid(format!(
            "inputs have dimensions ({}, {}), operator has {d}",
            f.dim(),
            g.dim()
        )));
    }
    if !f.grid().matches(g.grid()) {
        return Err(Error::GridMismatch("f and g are sampled on different grids".into()));
    }
    let grid = f.grid();
    if !(burn_in >= grid.h * (1.0 - 1e-9)) {
        return Err(invalid(format!(
            "burn-in {burn_in} is shorter than one step {}",
            grid.h
        )));
    }
    let b = (burn_in / grid.h).round() as usize;
    if b + 2 > grid.n {
        return Err(invalid(format!(
            "burn-in of {b} steps leaves fewer than two output points on a grid of {}",
            grid.n
        )));
    }
    Ok(b)
}

/// Runs the linear recursion for one replicate, calling `visit(k, x)` at every grid index.
fn linear_path(
    kernel: &StepKernel,
    f: &SampledPath,
    g: &SampledPath,
    rng: &KeyedRng,
    replicate: u64,
    mut visit: impl FnMut(usize, &[f64]),
) {
    let d = f.dim();
    let mut x = vec![0.0; d];
    let mut z = vec![0.0; kernel.channels()];
    let mut conv = vec![0.0; d];
    let mut normals = StepNormals::new(rng, replicate, kernel.channels());
    visit(0, &x);
    for k in 0..f.len() - 1 {
        normals.fill(&mut z);
        kernel.correlate(&z, &mut conv);
        kernel.advance_linear(&mut x, f.row(k), f.row(k + 1), g.row(k), &conv);
        visit(k + 1, &x);
    }
}

/// Applies the Green operator to deterministic inputs `f`, `g` sampled on the
/// full simulation grid. The solution starts from zero at the first grid time
/// and is reported from `burn_in` onwards; `noise` selects the returned
/// realization and `n_replicates` replicates under the same seed give the moments.
pub fn green_apply(
    op: &SpectralOperator,
    f: &SampledPath,
    g: &SampledPath,
    noise: &NoisePath,
    burn_in: f64,
    n_replicates: usize,
) -> Result<GreenOutput> {
    let b = check_inputs(op, f, g, burn_in)?;
    if !noise.grid.matches(f.grid()) {
        return Err(Error::GridMismatch("noise and inputs are on different grids".into()));
    }
    if n_replicates == 0 {
        return Err(invalid("need at least one replicate"));
    }
    let grid = *f.grid();
    let out_grid = grid.subgrid(b, 1)?;
    let kernel = op.step_kernel(grid.h);
    let rng = KeyedRng::new(noise.seed);
    let d = op.dim();

    let mut values = Vec::with_capacity(out_grid.n * d);
    linear_path(&kernel, f, g, &rng, noise.replicate, |k, x| {
        if k >= b {
            values.extend_from_slice(x);
        }
    });
    let realization = SampledPath::new(out_grid, d, values)?;

    let batches: Vec<(usize, Vec<f64>)> = batch_ranges(n_replicates)
        .into_par_iter()
        .map(|r| {
            let mut sums = vec![0.0; out_grid.n];
            for p in r.clone() {
                linear_path(&kernel, f, g, &rng, p as u64, |k, x| {
                    if k >= b {
                        sums[k - b] += x.iter().map(|v| v * v).sum::<f64>();
                    }
                });
            }
            (r.len(), sums)
        })
        .collect();
    let (second_moment, stderr) = reduce_batches(&batches);

    let actual_burn = b as f64 * grid.h;
    let sup2 = |p: &SampledPath| {
        p.rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let truncation_bound =
        op.stability_constant() * (-op.stability_rate() * actual_burn).exp() * sup_norm_bound(op, sup2(f), sup2(g))?;
    Ok(GreenOutput {
        realization,
        moments: MomentSeries {
            grid: out_grid,
            second_moment,
            stderr,
        },
        burn_in: actual_burn,
        truncation_bound,
    })
}

/// `n_paths` replicates of the Green operator, stored on the window after `burn_in`.
pub fn green_ensemble(
    op: &SpectralOperator,
    f: &SampledPath,
    g: &SampledPath,
    burn_in: f64,
    n_paths: usize,
    seed: u64,
) -> Result<StochasticEnsemble> {
    let b = check_inputs(op, f, g, burn_in)?;
    let grid = *f.grid();
    let out_grid = grid.subgrid(b, 1)?;
    let kernel = op.step_kernel(grid.h);
    let rng = KeyedRng::new(seed);
    let d = op.dim();
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut v = Vec::with_capacity(out_grid.n * d);
            linear_path(&kernel, f, g, &rng, p as u64, |k, x| {
                if k >= b {
                    v.extend_from_slice(x);
                }
            });
            v
        })
        .collect();
    Ok(StochasticEnsemble::from_parts(
        out_grid,
        d,
        seed,
        b,
        None,
        per_path.concat(),
    ))
}

/// Inputs and resolution of a comparability probe.
#[derive(Clone, Copy, Debug)]
pub struct ProbeSetup {
    /// Output window, sampled with the simulation step.
    pub window: UniformGrid,
    pub burn_in: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Window times at which laws are compared (every `law_stride` grid points).
    pub law_stride: usize,
    /// Independent pairs used to calibrate the noise floor.
    pub floor_pairs: usize,
}

impl ProbeSetup {
    pub(crate) fn simulation_grid(&self) -> Result<UniformGrid> {
        let b = (self.burn_in / self.window.h).round() as usize;
        UniformGrid::new(
            self.window.t0 - b as f64 * self.window.h,
            self.window.h,
            self.window.n + b,
        )
    }

    pub(crate) fn law_times(&self) -> Vec<f64> {
        (0..self.window.n)
            .step_by(self.law_stride.max(1))
            .map(|k| self.window.time(k))
            .collect()
    }
}

/// Per-shift sup-window distances of a comparability probe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub shifts: Vec<f64>,
    pub sups: Vec<f64>,
    pub series: Vec<LawDistanceSeries>,
    pub floor: NoiseFloor,
    /// Time window standing in for the compact interval (or all of the real line).
    pub window: [f64; 2],
    /// What the distances are measured on.
    pub metric: String,
}

pub(crate) fn metric_label(dim: usize) -> String {
    if dim == 1 {
        "beta".into()
    } else {
        format!("beta on {dim}-mode marginal")
    }
}

/// Compares laws of the bounded solutions with inputs `(f^{t_n}, g^{t_n})`
/// against the solution with the limit inputs, on fresh noise per equation.
pub fn linear_comparability_probe(
    op: &SpectralOperator,
    f: &dyn Signal,
    g: &dyn Signal,
    shifts: &[f64],
    limit_f: &dyn Signal,
    limit_g: &dyn Signal,
    setup: &ProbeSetup,
) -> Result<ProbeReport> {
    let grid = setup.simulation_grid()?;
    let run = |f: &dyn Signal, g: &dyn Signal, seed: u64| -> Result<StochasticEnsemble> {
        let fs = SampledPath::from_signal(f, grid)?;
        let gs = SampledPath::from_signal(g, grid)?;
        green_ensemble(op, &fs, &gs, setup.burn_in, setup.n_paths, seed)
    };
    let times = setup.law_times();
    let limit = run(limit_f, limit_g, derive_seed(setup.seed, 1, 0))?;
    let floor = NoiseFloor::calibrate(setup.floor_pairs, &times, |i| {
        let a = run(limit_f, limit_g, derive_seed(setup.seed, 2, 2 * i as u64))?;
        let b = run(limit_f, limit_g, derive_seed(setup.seed, 2, 2 * i as u64 + 1))?;
        Ok((a, b))
    })?;
    let mut series = Vec::with_capacity(shifts.len());
    for (i, &tau) in shifts.iter().enumerate() {
        let fs = Shifted { inner: f, shift: tau };
        let gs = Shifted { inner: g, shift: tau };
        let e = run(&fs, &gs, derive_seed(setup.seed, 3, i as u64))?;
        series.push(uniform_law_distance(&e, &limit, &times)?);
    }
    Ok(ProbeReport {
        shifts: shifts.to_vec(),
        sups: series.iter().map(|s| s.sup_value).collect(),
        series,
        floor,
        window: [setup.window.t0, setup.window.t_end()],
        metric: metric_label(op.dim()),
    })
}
