//! The bounded solution of `dx = (Ax + F(t, x)) dt + G(t, x) dW` as the fixed
//! point of `phi -> Green(F(., phi), G(., phi))`.
//!
//! The noise is frozen per replicate, so each iteration is a deterministic
//! map on the ensemble. All iterates up to a budget `K` are advanced together
//! in a single sweep over time: iterate `k + 1` at `t_{j+1}` only needs
//! iterate `k` at `t_j`, so nothing but the last iterate has to be stored.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::constants::{bounded_ball_radius, theta2, Thresholds};
use crate::ensemble::{batch_ranges, MomentSeries, StochasticEnsemble};
use crate::error::{invalid, Error, Result};
use crate::green::{metric_label, ProbeReport, ProbeSetup};
use crate::grid::UniformGrid;
use crate::law::{uniform_law_distance, NoiseFloor};
use crate::operator::SpectralOperator;
use crate::rng::{derive_seed, KeyedRng, StepNormals};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub n_replicates: usize,
    /// Stop once `sup_t ||phi_{k+1}(t) - phi_k(t)||_2` is at most this; default `max(1e-6 r, 1e-12)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub seed: u64,
    /// Default: `ln(1e8 N) / nu`.
    pub burn_in: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            n_replicates: 2000,
            tol: None,
            max_iter: 100,
            seed: 0,
            burn_in: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedPointTrace {
    /// `sup_t ||phi_k - phi_{k-1}||_2` for `k = 1..`, up to the first value within tolerance.
    pub iterates: Vec<f64>,
    /// Ratios of successive squared distances, comparable with `theta_2`.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
    /// Distance between the first converged iterate and the next one.
    pub residual: Option<f64>,
    pub burn_in: f64,
    pub r: f64,
    /// `E|xi(t)|^2` on the output window.
    pub moments: Option<MomentSeries>,
    /// Grid points where `||xi(t)||_2 > r + 3 stderr`.
    pub ball_violations: usize,
    #[serde(skip)]
    pub final_path_ensemble: Option<StochasticEnsemble>,
}

struct Sweep {
    /// `sup_t E|phi_k - phi_{k-1}|^2`, `k = 1..=K`.
    sup_sq: Vec<f64>,
    last: Option<StochasticEnsemble>,
}

fn sweep(
    op: &SpectralOperator,
    drift: &CoefficientField,
    diffusion: &CoefficientField,
    sim: UniformGrid,
    burn_steps: usize,
    opts: &SolveOptions,
    budget: usize,
    record: bool,
) -> Result<Sweep> {
    let d = op.dim();
    let n = sim.n;
    let kernel = op.step_kernel(sim.h);
    let rng = KeyedRng::new(opts.seed);
    let out_n = n - burn_steps;

    struct BatchOut {
        diff: Vec<f64>,
        states: Vec<f64>,
    }

    let batches: Vec<Result<BatchOut>> = batch_ranges(opts.n_replicates)
        .into_par_iter()
        .map(|range| {
            // diff[(k - 1) * n + j] accumulates |phi_k - phi_{k-1}|^2 at t_j
            let mut diff = vec![0.0; budget * n];
            let mut states = Vec::new();
            let mut phi = vec![0.0; (budget + 1) * d];
            let mut fl = vec![0.0; budget * d];
            let mut gl = vec![0.0; budget * d];
            let mut z = vec![0.0; kernel.channels()];
            let mut conv = vec![0.0; d];
            for p in range.clone() {
                phi.fill(0.0);
                let mut normals = StepNormals::new(&rng, p as u64, kernel.channels());
                let eval_all = |t: f64, phi: &[f64], fl: &mut [f64], gl: &mut [f64]| -> Result<()> {
                    for k in 0..budget {
                        let x = &phi[k * d..(k + 1) * d];
                        drift.eval_checked(t, x, &mut fl[k * d..(k + 1) * d])?;
                        diffusion.eval_checked(t, x, &mut gl[k * d..(k + 1) * d])?;
                    }
                    Ok(())
                };
                eval_all(sim.t0, &phi, &mut fl, &mut gl)?;
                if record && burn_steps == 0 {
                    states.extend_from_slice(&phi[budget * d..]);
                }
                for j in 0..n - 1 {
                    normals.fill(&mut z);
                    kernel.correlate(&z, &mut conv);
                    for k in 1..=budget {
                        let (f, g) = (&fl[(k - 1) * d..k * d], &gl[(k - 1) * d..k * d]);
                        kernel.advance_frozen(&mut phi[k * d..(k + 1) * d], f, g, &conv);
                    }
                    if !phi.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFinite { path: p, step: j + 1 });
                    }
                    for k in 1..=budget {
                        let s: f64 = (0..d).map(|i| (phi[k * d + i] - phi[(k - 1) * d + i]).powi(2)).sum();
                        diff[(k - 1) * n + j + 1] += s;
                    }
                    eval_all(sim.time(j + 1), &phi, &mut fl, &mut gl)?;
                    if record && j + 1 >= burn_steps {
                        states.extend_from_slice(&phi[budget * d..]);
                    }
                }
            }
            Ok(BatchOut { diff, states })
        })
        .collect();

    let mut total = vec![0.0; budget * n];
    let mut all_states = Vec::with_capacity(if record { opts.n_replicates * out_n * d } else { 0 });
    for b in batches {
        let b = b?;
        for (t, v) in total.iter_mut().zip(&b.diff) {
            *t += v;
        }
        all_states.extend_from_slice(&b.states);
    }
    let m = opts.n_replicates as f64;
    let sup_sq = (0..budget)
        .map(|k| total[k * n..(k + 1) * n].iter().fold(0.0f64, |a, v| a.max(v / m)))
        .collect();
    let last = record.then(|| {
        let out_grid = sim.subgrid(burn_steps, 1).expect("window inside simulation grid");
        StochasticEnsemble::from_parts(out_grid, d, opts.seed, burn_steps, None, all_states)
    });
    Ok(Sweep { sup_sq, last })
}

fn declared(drift: &CoefficientField, diffusion: &CoefficientField) -> (f64, f64) {
    let (cf, cg) = (drift.constants(), diffusion.constants());
    (cf.a0.max(cg.a0), cf.lipschitz.max(cg.lipschitz))
}

/// Simulation grid covering the burn-in before `window` with the same step.
pub(crate) fn with_burn_in(window: &UniformGrid, burn_in: f64) -> Result<(UniformGrid, usize)> {
    if !(burn_in >= 0.0) {
        return Err(invalid("burn-in must be nonnegative"));
    }
    let b = (burn_in / window.h).round() as usize;
    Ok((
        UniformGrid::new(window.t0 - b as f64 * window.h, window.h, window.n + b)?,
        b,
    ))
}

/// Iterates from `phi_0 = 0` until successive iterates are within tolerance.
/// `window` is the output grid; the iteration runs on the window preceded by the burn-in.
pub fn solve_bounded_solution(
    op: &SpectralOperator,
    drift: &CoefficientField,
    diffusion: &CoefficientField,
    window: &UniformGrid,
    opts: &SolveOptions,
) -> Result<FixedPointTrace> {
    if drift.dim() != op.dim() || diffusion.dim() != op.dim() {
        return Err(invalid("coefficient dimensions do not match the operator"));
    }
    if opts.n_replicates < 2 {
        return Err(invalid("need at least two replicates"));
    }
    if opts.max_iter == 0 {
        return Err(invalid("max_iter must be positive"));
    }
    let (nn, nu) = (op.stability_constant(), op.stability_rate());
    let (a0, lip) = declared(drift, diffusion);
    let th = Thresholds::new(nn, nu)?;
    if !(lip < th.solve) {
        return Err(Error::Inadmissible(format!(
            "L = {lip} is not below nu / (N sqrt(2 + nu)) = {}",
            th.solve
        )));
    }
    let r = bounded_ball_radius(nn, nu, a0, lip)?;
    let tol = opts.tol.unwrap_or((1e-6 * r).max(1e-12));
    let burn_in = opts.burn_in.unwrap_or_else(|| op.burn_in_for(1e-8));
    let (sim, b) = with_burn_in(window, burn_in)?;

    // iterates needed if distances shrink by sqrt(theta_2) from about r down to tol
    let rate = theta2(nn, nu, lip).sqrt();
    let predicted = if r > tol && rate > 0.0 {
        ((tol / r).ln() / rate.ln()).ceil() as usize + 3
    } else {
        3
    };
    let mut budget = predicted.clamp(2, opts.max_iter + 1);
    loop {
        let s = sweep(op, drift, diffusion, sim, b, opts, budget, true)?;
        let dist: Vec<f64> = s.sup_sq.iter().map(|v| v.sqrt()).collect();
        let hit = dist.iter().position(|&v| v <= tol);
        let done = matches!(hit, Some(k) if k + 1 < budget) || budget > opts.max_iter;
        if done {
            let upto = hit.map_or(budget.min(opts.max_iter), |k| k + 1);
            let iterates = dist[..upto].to_vec();
            let ratios = s.sup_sq[..upto]
                .windows(2)
                .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
                .collect();
            let ens = s.last.expect("recorded");
            let moments = ens.second_moment();
            let ball_violations = moments
                .second_moment
                .iter()
                .zip(&moments.stderr)
                .filter(|(m, e)| {
                    let norm_err = if **m > 0.0 { **e / (2.0 * m.sqrt()) } else { e.sqrt() };
                    m.sqrt() > r + 3.0 * norm_err + 1e-12
                })
                .count();
            let trace = FixedPointTrace {
                iterates,
                ratios,
                converged: hit.is_some(),
                tol,
                residual: hit.and_then(|k| dist.get(k + 1).copied()),
                burn_in: b as f64 * window.h,
                r,
                moments: Some(moments),
                ball_violations,
                final_path_ensemble: Some(ens),
            };
            return if trace.converged {
                Ok(trace)
            } else {
                Err(Error::NotConverged(Box::new(trace)))
            };
        }
        budget = (budget * 2).min(opts.max_iter + 1);
    }
}

/// Solves the shifted equations with coefficients `(F^{t_n}, G^{t_n})` and the
/// limit equation, and reports sup-window `beta` distances between solution laws.
#[allow(clippy::too_many_arguments)]
pub fn semilinear_comparability_probe(
    op: &SpectralOperator,
    drift: &CoefficientField,
    diffusion: &CoefficientField,
    shifts: &[f64],
    limit_drift: &CoefficientField,
    limit_diffusion: &CoefficientField,
    setup: &ProbeSetup,
) -> Result<ProbeReport> {
    let th = Thresholds::new(op.stability_constant(), op.stability_rate())?;
    for (f, g) in [(drift, diffusion), (limit_drift, limit_diffusion)] {
        let (_, lip) = declared(f, g);
        if !(lip < th.comparability) {
            return Err(Error::Inadmissible(format!(
                "L = {lip} is not below nu / (2 N sqrt(1 + nu)) = {}",
                th.comparability
            )));
        }
    }
    let solve = |f: &CoefficientField, g: &CoefficientField, seed: u64| -> Result<StochasticEnsemble> {
        let opts = SolveOptions {
            n_replicates: setup.n_paths,
            seed,
            burn_in: Some(setup.burn_in),
            ..Default::default()
        };
        let trace = solve_bounded_solution(op, f, g, &setup.window, &opts)?;
        Ok(trace.final_path_ensemble.expect("recorded"))
    };
    let times = setup.law_times();
    let limit = solve(limit_drift, limit_diffusion, derive_seed(setup.seed, 1, 0))?;
    let floor = NoiseFloor::calibrate(setup.floor_pairs, &times, |i| {
        let a = solve(limit_drift, limit_diffusion, derive_seed(setup.seed, 2, 2 * i as u64))?;
        let b = solve(
            limit_drift,
            limit_diffusion,
            derive_seed(setup.seed, 2, 2 * i as u64 + 1),
        )?;
        Ok((a, b))
    })?;
    let mut series = Vec::with_capacity(shifts.len());
    for (i, &tau) in shifts.iter().enumerate() {
        let e = solve(
            &drift.shifted(tau),
            &diffusion.shifted(tau),
            derive_seed(setup.seed, 3, i as u64),
        )?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::FieldConstants;

    fn window() -> UniformGrid {
        UniformGrid::new(0.0, 2e-3, 251).unwrap()
    }

    fn opts(n: usize) -> SolveOptions {
        SolveOptions {
            n_replicates: n,
            ..Default::default()
        }
    }

    #[test]
    fn zero_coefficients_converge_at_once() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let z = CoefficientField::zero(1);
        let t = solve_bounded_solution(&op, &z, &z, &window(), &opts(4)).unwrap();
        assert_eq!(t.iterates, vec![0.0]);
        assert!(t.final_path_ensemble.unwrap().states().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_drift_equilibrium() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let f = CoefficientField::constant(vec![2.0]).unwrap();
        let z = CoefficientField::zero(1);
        let t = solve_bounded_solution(&op, &f, &z, &window(), &opts(4)).unwrap();
        assert!(t.converged && t.iterates.len() == 2);
        let e = t.final_path_ensemble.unwrap();
        for v in e.states() {
            assert!((v - 0.4).abs() < 1e-7);
        }
    }

    #[test]
    fn contraction_and_ball() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let c = FieldConstants {
            a0: 1.0,
            lipschitz: 2.0 / 3.0,
            growth: 2.0 / 3.0,
            continuity_modulus: None,
        };
        let f = CoefficientField::scalar("f", c, |t, x| t.cos() + (2.0 / 3.0) * x.sin()).unwrap();
        let g = CoefficientField::scalar("g", c, |t, x| 0.5 * (2.0 * t).sin() + 0.5 * x).unwrap();
        let t = solve_bounded_solution(&op, &f, &g, &window(), &opts(256)).unwrap();
        assert!(t.converged);
        for r in t.ratios.iter().skip(1) {
            assert!(*r <= 28.0 / 225.0 + 0.05, "{r}");
        }
        assert_eq!(t.ball_violations, 0);
        assert!(t.residual.unwrap() <= t.tol);
    }

    #[test]
    fn inadmissible_lipschitz_is_refused() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let c = FieldConstants {
            lipschitz: 2.0,
            ..Default::default()
        };
        let f = CoefficientField::scalar("f", c, |_, x| 2.0 * x).unwrap();
        let z = CoefficientField::zero(1);
        assert!(matches!(
            solve_bounded_solution(&op, &f, &z, &window(), &opts(4)),
            Err(Error::Inadmissible(_))
        ));
    }

    #[test]
    fn not_converged_reports_trace() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let c = FieldConstants {
            a0: 1.0,
            lipschitz: 1.5,
            growth: 1.5,
            continuity_modulus: None,
        };
        let f = CoefficientField::scalar("f", c, |t, x| t.cos() + 1.5 * x.sin()).unwrap();
        let z = CoefficientField::zero(1);
        let o = SolveOptions { max_iter: 2, ..opts(4) };
        match solve_bounded_solution(&op, &f, &z, &window(), &o) {
            Err(Error::NotConverged(t)) => assert_eq!(t.iterates.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let op = SpectralOperator::scalar(5.0).unwrap();
        let c = FieldConstants {
            a0: 1.0,
            lipschitz: 0.5,
            growth: 0.5,
            continuity_modulus: None,
        };
        let f = CoefficientField::scalar("f", c, |t, x| t.sin() + 0.5 * x.cos()).unwrap();
        let g = CoefficientField::scalar("g", c, |_, x| 1.0 + 0.5 * x.sin()).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| solve_bounded_solution(&op, &f, &g, &window(), &opts(100)).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.iterates, b.iterates);
        assert_eq!(
            a.final_path_ensemble.unwrap().states(),
            b.final_path_ensemble.unwrap().states()
        );
    }
}
