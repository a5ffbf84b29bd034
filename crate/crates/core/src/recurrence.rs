//! Compact-open (Bebutov) distance between paths, epsilon-almost-period
//! scans, and the weighted sup distance between coefficient fields.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{random_in_ball, CoefficientField};
use crate::error::{invalid, Error, Result};
use crate::grid::{check_same_grid, UniformGrid};
use crate::path::{dist, SampledPath, Signal};

pub use crate::reference::{make_reference, ReferenceFunction, ReferenceFunctionSpec};

const BISECTION_TOL: f64 = 1e-13;

/// Pointwise distance profile `rho(t) = |a(t) - b(t)|`, linear between samples.
struct DeviationProfile {
    grid: UniformGrid,
    rho_at: Vec<f64>,
    // interpolation of the difference vector, needed off-grid
    diff: Vec<f64>,
    dim: usize,
}

impl DeviationProfile {
    fn new(a: &SampledPath, b: &SampledPath) -> Self {
        let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let dim = a.dim();
        let rho_at = diff.chunks(dim).map(crate::path::norm).collect();
        Self {
            grid: *a.grid(),
            rho_at,
            diff,
            dim,
        }
    }

    fn rho_interp(&self, t: f64) -> f64 {
        let x = ((t - self.grid.t0) / self.grid.h).clamp(0.0, (self.grid.n - 1) as f64);
        let k = (x.floor() as usize).min(self.grid.n - 2);
        let w = x - k as f64;
        let (p, q) = (
            &self.diff[k * self.dim..(k + 1) * self.dim],
            &self.diff[(k + 1) * self.dim..(k + 2) * self.dim],
        );
        p.iter()
            .zip(q)
            .map(|(u, v)| {
                let z = u + w * (v - u);
                z * z
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `max_{|t| <= half_width} rho(t)`; exact for the piecewise-linear
    /// interpolant since the norm of a linear segment is convex.
    fn max_within(&self, half_width: f64) -> f64 {
        let mut m = self.rho_interp(-half_width).max(self.rho_interp(half_width));
        for (k, &r) in self.rho_at.iter().enumerate() {
            if self.grid.time(k).abs() <= half_width {
                m = m.max(r);
            }
        }
        m
    }
}

/// `max_{|t| <= half_width} |a(t) - b(t)|` with linear interpolation between samples.
pub fn max_deviation_within(a: &SampledPath, b: &SampledPath, half_width: f64) -> Result<f64> {
    check_same_grid(a.grid(), b.grid(), "paths")?;
    if a.dim() != b.dim() {
        return Err(invalid("paths differ in dimension"));
    }
    Ok(DeviationProfile::new(a, b).max_within(half_width))
}

/// The compact-open distance `d(a, b)`: the unique `eps >= 0` with
/// `max_{|t| <= 1/eps} |a(t) - b(t)| = eps`, found by bisection.
pub fn bebutov_distance(a: &SampledPath, b: &SampledPath) -> Result<f64> {
    check_same_grid(a.grid(), b.grid(), "bebutov_distance")?;
    if a.dim() != b.dim() {
        return Err(Error::GridMismatch("paths differ in dimension".into()));
    }
    let g = a.grid();
    let half_width = (-g.t0).min(g.t_end());
    if half_width < 1.0 {
        return Err(invalid(format!(
            "grid must span [-L, L] with L >= 1, spans [{}, {}]",
            g.t0,
            g.t_end()
        )));
    }
    let profile = DeviationProfile::new(a, b);
    let rho_max = profile.rho_at.iter().copied().fold(0.0, f64::max);
    if rho_max == 0.0 {
        return Ok(0.0);
    }
    // gap(eps) = max_{|t|<=1/eps} rho - eps is strictly decreasing
    let gap = |eps: f64| profile.max_within(1.0 / eps) - eps;

    let eps_min = 1.0 / half_width;
    let at_min = gap(eps_min);
    if at_min < 0.0 {
        return Err(Error::Truncated {
            lo: profile.max_within(half_width),
            hi: eps_min,
            half_width,
        });
    }
    if at_min == 0.0 {
        return Ok(eps_min);
    }
    let (mut lo, mut hi) = (eps_min, 2.0 * rho_max.max(eps_min) + 1.0);
    for _ in 0..400 {
        if hi - lo <= BISECTION_TOL * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Detected epsilon-almost periods over a scan window, relative to a finite comparison core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlmostPeriodReport {
    pub epsilon: f64,
    pub scan_window: [f64; 2],
    pub scan_step: f64,
    /// The sup over all `t` is taken over `[-core_half_width, core_half_width]` only.
    pub core_half_width: f64,
    pub periods: Vec<f64>,
    /// `sup_core |phi(t + tau) - phi(t)|` for each detected period.
    pub deviations: Vec<f64>,
    pub max_gap: f64,
    pub classification: String,
}

impl AlmostPeriodReport {
    /// One representative per contiguous run of detected shifts: the one with the smallest deviation.
    pub fn cluster_minima(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut prev: Option<f64> = None;
        for (&tau, &dev) in self.periods.iter().zip(&self.deviations) {
            match (prev, out.last_mut()) {
                (Some(p), Some(last)) if tau - p <= 1.5 * self.scan_step => {
                    if dev < last.1 {
                        *last = (tau, dev);
                    }
                }
                _ => out.push((tau, dev)),
            }
            prev = Some(tau);
        }
        out
    }
}

/// How the comparison core is sampled for an analytic signal.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CoreSampling {
    pub half_width: f64,
    pub step: f64,
}

fn scan_counts(window: [f64; 2], step: f64) -> Result<usize> {
    if !(step > 0.0) {
        return Err(invalid("scan_step must be positive"));
    }
    if !(window[1] >= window[0]) {
        return Err(invalid("scan window is empty"));
    }
    Ok(((window[1] - window[0]) / step + 1e-9).floor() as usize + 1)
}

// coarse-to-fine visiting order so most rejections happen after a few points
fn visit_order(n: usize) -> Vec<usize> {
    const STRIDE: usize = 16;
    (0..STRIDE.min(n)).flat_map(|o| (o..n).step_by(STRIDE)).collect()
}

fn scan<F>(
    core_times: &[f64],
    core_values: &[f64],
    dim: usize,
    epsilon: f64,
    window: [f64; 2],
    step: f64,
    shifted: F,
) -> Result<Vec<(f64, f64)>>
where
    F: Fn(f64, &mut [f64]) + Sync,
{
    let count = scan_counts(window, step)?;
    let order = visit_order(core_times.len());
    const CHUNK: usize = 1 << 14;
    let chunks: Vec<Vec<(f64, f64)>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut buf = vec![0.0; dim];
            let mut hits = Vec::new();
            for j in c * CHUNK..((c + 1) * CHUNK).min(count) {
                let tau = window[0] + j as f64 * step;
                let mut sup: f64 = 0.0;
                for &i in &order {
                    shifted(core_times[i] + tau, &mut buf);
                    sup = sup.max(dist(&buf, &core_values[i * dim..(i + 1) * dim]));
                    if sup >= epsilon {
                        break;
                    }
                }
                if sup < epsilon {
                    hits.push((tau, sup));
                }
            }
            hits
        })
        .collect();
    Ok(chunks.concat())
}

fn build_report(
    epsilon: f64,
    window: [f64; 2],
    step: f64,
    core_half_width: f64,
    hits: Vec<(f64, f64)>,
) -> AlmostPeriodReport {
    let (periods, deviations): (Vec<f64>, Vec<f64>) = hits.into_iter().unzip();
    let max_gap = if periods.is_empty() {
        window[1] - window[0]
    } else {
        let inner = periods.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        inner
            .max(periods[0] - window[0])
            .max(window[1] - periods[periods.len() - 1])
    };
    AlmostPeriodReport {
        epsilon,
        scan_window: window,
        scan_step: step,
        core_half_width,
        periods,
        deviations,
        max_gap,
        classification: format!(
            "evidence: epsilon-almost periods relative to core [-{core_half_width}, {core_half_width}]"
        ),
    }
}

/// Scans `tau` over `window` for `sup_{|t| <= core} |path(t + tau) - path(t)| < epsilon`.
/// Core points are the grid points in the core; `path(t + tau)` is interpolated.
pub fn epsilon_almost_periods(
    path: &SampledPath,
    epsilon: f64,
    window: [f64; 2],
    scan_step: f64,
    core_half_width: f64,
) -> Result<AlmostPeriodReport> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let g = path.grid();
    let core: Vec<usize> = (0..g.n).filter(|&k| g.time(k).abs() <= core_half_width).collect();
    if core.is_empty() {
        return Err(invalid("comparison core contains no grid points"));
    }
    let core_times: Vec<f64> = core.iter().map(|&k| g.time(k)).collect();
    let (cmin, cmax) = (core_times[0], core_times[core_times.len() - 1]);
    if !(g.contains(cmin + window[0]) && g.contains(cmax + window[1])) {
        return Err(invalid(format!(
            "path on [{}, {}] does not cover core [{cmin}, {cmax}] shifted by window [{}, {}]",
            g.t0,
            g.t_end(),
            window[0],
            window[1]
        )));
    }
    let core_values: Vec<f64> = core.iter().flat_map(|&k| path.row(k).iter().copied()).collect();
    let hits = scan(
        &core_times,
        &core_values,
        path.dim(),
        epsilon,
        window,
        scan_step,
        |t, out| path.eval(t, out),
    )?;
    Ok(build_report(epsilon, window, scan_step, core_half_width, hits))
}

/// Same scan for an analytic signal; used when the window is too long to sample.
pub fn scan_almost_periods(
    signal: &dyn Signal,
    epsilon: f64,
    window: [f64; 2],
    scan_step: f64,
    core: CoreSampling,
) -> Result<AlmostPeriodReport> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(core.half_width >= 0.0 && core.step > 0.0) {
        return Err(invalid("empty comparison core"));
    }
    let n = (2.0 * core.half_width / core.step).floor() as usize + 1;
    let core_times: Vec<f64> = (0..n).map(|i| -core.half_width + i as f64 * core.step).collect();
    let dim = signal.dim();
    let mut core_values = vec![0.0; n * dim];
    for (t, row) in core_times.iter().zip(core_values.chunks_mut(dim)) {
        signal.eval(*t, row);
    }
    let hits = scan(&core_times, &core_values, dim, epsilon, window, scan_step, |t, out| {
        signal.eval(t, out)
    })?;
    Ok(build_report(epsilon, window, scan_step, core.half_width, hits))
}

/// `sum_{n <= N} 2^-n d_n / (1 + d_n)` with
/// `d_n = sup_{|t| <= n, |x| <= ball_radii[n-1]} |F(t,x) - G(t,x)|`,
/// the sup estimated over the grid times and `state_samples` points per ball.
pub fn coefficient_distance(
    f: &CoefficientField,
    g: &CoefficientField,
    grid: &UniformGrid,
    ball_radii: &[f64],
    state_samples: usize,
) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(invalid("fields differ in dimension"));
    }
    if ball_radii.is_empty() {
        return Err(invalid("ball_radii is empty"));
    }
    if ball_radii[0] < 0.0 || ball_radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("ball_radii must be nonnegative and increasing"));
    }
    let dim = f.dim();
    let mut total = 0.0;
    let mut fo = vec![0.0; dim];
    let mut go = vec![0.0; dim];
    for (idx, &radius) in ball_radii.iter().enumerate() {
        let n = (idx + 1) as f64;
        let times: Vec<f64> = grid.times().filter(|t| t.abs() <= n).collect();
        if times.is_empty() {
            return Err(invalid(format!("grid has no points with |t| <= {n}")));
        }
        let states = ball_points(dim, radius, state_samples, idx as u64);
        let mut d_n: f64 = 0.0;
        for &t in &times {
            for x in states.chunks(dim) {
                f.eval_checked(t, x, &mut fo)?;
                g.eval_checked(t, x, &mut go)?;
                d_n = d_n.max(dist(&fo, &go));
            }
        }
        total += 0.5f64.powi(idx as i32 + 1) * d_n / (1.0 + d_n);
    }
    Ok(total)
}

/// Probe points in the closed ball: a lattice for `dim == 1`, otherwise the
/// origin, points on the axes and seeded random points.
fn ball_points(dim: usize, radius: f64, samples: usize, salt: u64) -> Vec<f64> {
    let samples = samples.max(3);
    if dim == 1 {
        return (0..samples)
            .map(|i| -radius + 2.0 * radius * i as f64 / (samples - 1) as f64)
            .collect();
    }
    let mut pts = vec![0.0; dim];
    for axis in 0..dim {
        for s in [-1.0, -0.5, 0.5, 1.0] {
            let mut p = vec![0.0; dim];
            p[axis] = s * radius;
            pts.extend(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xba11 ^ salt);
    let mut p = vec![0.0; dim];
    for _ in 0..samples {
        random_in_ball(&mut rng, radius, &mut p);
        pts.extend_from_slice(&p);
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::FieldConstants;
    use proptest::prelude::*;
    use std::f64::consts::{PI, SQRT_2};

    fn grid(h: f64) -> UniformGrid {
        UniformGrid::spanning(-10.0, 10.0, h).unwrap()
    }

    #[test]
    fn identical_paths_have_zero_distance() {
        let p = SampledPath::from_scalar_fn(grid(0.01), f64::sin).unwrap();
        assert_eq!(bebutov_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let a = SampledPath::constant(grid(0.01), &[0.0]).unwrap();
        let b = SampledPath::constant(grid(0.01), &[0.5]).unwrap();
        assert!((bebutov_distance(&a, &b).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn identity_vs_zero() {
        let a = SampledPath::from_scalar_fn(grid(0.01), |t| t).unwrap();
        let b = SampledPath::constant(grid(0.01), &[0.0]).unwrap();
        assert!((bebutov_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    // Oracle: dense scan of sup_L min(max_{|t|<=L} rho, 1/L).
    #[test]
    fn matches_dense_scan_oracle() {
        let g = grid(0.01);
        let a = SampledPath::from_scalar_fn(g, |t| (0.3 * t).sin()).unwrap();
        let b = SampledPath::from_scalar_fn(g, |t| 0.2 * (0.7 * t).cos()).unwrap();
        let d = bebutov_distance(&a, &b).unwrap();
        let oracle = (1..=100_000)
            .map(|i| {
                let l = 10.0 * i as f64 / 100_000.0;
                max_deviation_within(&a, &b, l).unwrap().min(1.0 / l)
            })
            .fold(0.0, f64::max);
        assert!((d - oracle).abs() < 1e-3, "{d} vs {oracle}");
    }

    #[test]
    fn short_grid_reports_truncation() {
        let g = UniformGrid::spanning(-2.0, 2.0, 0.01).unwrap();
        let a = SampledPath::constant(g, &[0.0]).unwrap();
        let b = SampledPath::constant(g, &[0.01]).unwrap();
        match bebutov_distance(&a, &b) {
            Err(Error::Truncated { lo, hi, .. }) => {
                assert!((lo - 0.01).abs() < 1e-12);
                assert!((hi - 0.5).abs() < 1e-12);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = SampledPath::constant(grid(0.01), &[0.0]).unwrap();
        let b = SampledPath::constant(grid(0.02), &[0.0]).unwrap();
        assert!(matches!(bebutov_distance(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn constant_path_every_shift_is_a_period() {
        let g = UniformGrid::spanning(-5.0, 30.0, 0.05).unwrap();
        let p = SampledPath::constant(g, &[2.0]).unwrap();
        let r = epsilon_almost_periods(&p, 1e-3, [0.0, 20.0], 0.5, 5.0).unwrap();
        assert_eq!(r.periods.len(), 41);
        assert!((r.max_gap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sine_periods_match_closed_form() {
        let g = UniformGrid::spanning(-10.0, 60.0, 0.001).unwrap();
        let p = SampledPath::from_scalar_fn(g, f64::sin).unwrap();
        let eps = 0.01;
        let r = epsilon_almost_periods(&p, eps, [0.0, 40.0], 0.001, 10.0).unwrap();
        assert!(!r.periods.is_empty());
        // closed form: sup_t |sin(t + tau) - sin t| = 2 |sin(tau/2)|
        for j in 0..=40_000 {
            let tau = j as f64 * 0.001;
            let exact = 2.0 * (tau / 2.0).sin().abs();
            let found = r.periods.iter().any(|&p| (p - tau).abs() < 1e-9);
            // skip the discretization band around the threshold
            if (exact - eps).abs() > 2e-5 {
                assert_eq!(found, exact < eps, "tau = {tau}, exact = {exact}");
            }
        }
        for &tau in &r.periods {
            let k = (tau / (2.0 * PI)).round();
            assert!((tau - 2.0 * PI * k).abs() < 0.0101);
        }
    }

    #[test]
    fn quasi_periodic_periods_are_relatively_dense() {
        let f = crate::path::scalar_signal(|t| t.cos() + (SQRT_2 * t).cos());
        let r = scan_almost_periods(
            &f,
            0.1,
            [0.0, 500.0],
            0.002,
            CoreSampling {
                half_width: 10.0,
                step: 0.01,
            },
        )
        .unwrap();
        assert!(!r.periods.is_empty());
        assert!(r.max_gap < 500.0);
        // brute-force oracle on each detected shift
        for (&tau, &dev) in r.periods.iter().zip(&r.deviations) {
            let brute = (0..=2000)
                .map(|i| {
                    let t = -10.0 + i as f64 * 0.01;
                    (((t + tau).cos() + (SQRT_2 * (t + tau)).cos()) - (t.cos() + (SQRT_2 * t).cos())).abs()
                })
                .fold(0.0, f64::max);
            assert!((brute - dev).abs() < 1e-9 && brute < 0.1);
        }
    }

    #[test]
    fn almost_period_errors() {
        let p = SampledPath::constant(grid(0.1), &[0.0]).unwrap();
        assert!(epsilon_almost_periods(&p, 0.0, [0.0, 1.0], 0.1, 1.0).is_err());
        assert!(epsilon_almost_periods(&p, 0.1, [0.0, 1.0], 0.1, -1.0).is_err());
        assert!(epsilon_almost_periods(&p, 0.1, [0.0, 50.0], 0.1, 5.0).is_err());
    }

    #[test]
    fn cluster_minima_picks_best_in_run() {
        let r = build_report(
            0.1,
            [0.0, 10.0],
            1.0,
            1.0,
            vec![(1.0, 0.05), (2.0, 0.01), (3.0, 0.04), (7.0, 0.02)],
        );
        assert_eq!(r.cluster_minima(), vec![(2.0, 0.01), (7.0, 0.02)]);
        assert_eq!(r.max_gap, 4.0);
    }

    fn scalar_field(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> CoefficientField {
        CoefficientField::scalar("f", FieldConstants::default(), f).unwrap()
    }

    #[test]
    fn coefficient_distance_examples() {
        let g = grid(0.001);
        let radii = [1.0, 2.0, 3.0, 4.0, 5.0];
        let zero = scalar_field(|_, _| 0.0);
        let one = scalar_field(|_, _| 1.0);
        assert_eq!(coefficient_distance(&zero, &zero, &g, &radii, 11).unwrap(), 0.0);
        let d = coefficient_distance(&zero, &one, &g, &radii, 11).unwrap();
        assert!((d - 0.5 * (1.0 - 0.5f64.powi(5))).abs() < 1e-15);

        // d_1 = 2 sin 1 (|t| <= 1 does not reach pi/2), d_n = 2 for n >= 2
        let s = scalar_field(|t, _| t.sin());
        let sp = scalar_field(|t, _| (t + PI).sin());
        let d = coefficient_distance(&s, &sp, &g, &radii, 5).unwrap();
        let d1 = 2.0 * 1f64.sin();
        let expected = 0.5 * d1 / (1.0 + d1) + (2.0 / 3.0) * (0.5 - 0.5f64.powi(5));
        assert!((d - expected).abs() < 1e-6, "{d} vs {expected}");
    }

    #[test]
    fn coefficient_distance_rejects_bad_radii() {
        let z = scalar_field(|_, _| 0.0);
        assert!(coefficient_distance(&z, &z, &grid(0.1), &[], 3).is_err());
        assert!(coefficient_distance(&z, &z, &grid(0.1), &[2.0, 1.0], 3).is_err());
    }

    fn random_path(seed: u64) -> SampledPath {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, w, c): (f64, f64, f64) = (
            rng.gen_range(0.0..2.0),
            rng.gen_range(0.1..3.0),
            rng.gen_range(-1.0..1.0),
        );
        let g = UniformGrid::spanning(-50.0, 50.0, 0.05).unwrap();
        SampledPath::from_scalar_fn(g, move |t| a * (w * t).sin() + c + 0.05 * t).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn bebutov_metric_axioms(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
            let (a, b, c) = (random_path(s1), random_path(s2), random_path(s3));
            let ab = bebutov_distance(&a, &b).unwrap();
            let ba = bebutov_distance(&b, &a).unwrap();
            let bc = bebutov_distance(&b, &c).unwrap();
            let ac = bebutov_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9);
            if s1 != s2 { prop_assert!(ab > 0.0); }
        }

        #[test]
        fn lemma_trichotomy(s1 in 0u64..1000, s2 in 0u64..1000, k in 0.05f64..0.95) {
            prop_assume!(s1 != s2);
            let (a, b) = (random_path(s1), random_path(s2));
            let eps = bebutov_distance(&a, &b).unwrap();
            let m = |e: f64| max_deviation_within(&a, &b, 1.0 / e).unwrap();
            prop_assert!((m(eps) - eps).abs() < 1e-9);
            let above = eps * (1.0 + k);
            prop_assert!(m(above) < above);
            let below = eps * (1.0 - k);
            if 1.0 / below <= 50.0 {
                prop_assert!(m(below) > below);
            }
        }

        #[test]
        fn almost_periods_monotone_in_epsilon(e in 0.02f64..0.3, factor in 1.0f64..3.0) {
            let f = crate::path::scalar_signal(|t| t.cos() + (SQRT_2 * t).cos());
            let core = CoreSampling { half_width: 3.0, step: 0.05 };
            let small = scan_almost_periods(&f, e, [0.0, 60.0], 0.01, core).unwrap();
            let large = scan_almost_periods(&f, e * factor, [0.0, 60.0], 0.01, core).unwrap();
            for tau in &small.periods {
                prop_assert!(large.periods.contains(tau));
            }
        }
    }
}
