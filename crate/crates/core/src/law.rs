//! Empirical laws and the bounded-Lipschitz distance between them.
//!
//! For laws `a`, `b` on a finite support with signed mass `c = a - b`,
//!
//! ```text
//! beta(a, b) = max_{s in [0,1]} V(s),
//! V(s) = max { sum c_i f_i : |f_i| <= s, |f_i - f_j| <= (1 - s) |x_i - x_j| }.
//! ```
//!
//! `V` is concave in `s`, so the outer maximum is found by golden-section
//! search. On the real line the inner problem only needs the constraints
//! between neighbours and is solved exactly by a dynamic program over
//! concave piecewise-linear value functions; in higher dimension it is a
//! linear program.

use std::collections::VecDeque;
use std::io::Write;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::StochasticEnsemble;
use crate::error::{invalid, Error, Result};
use crate::path::dist;
use crate::rng::{Channel, KeyedRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLaw {
    dim: usize,
    /// Row-major `m x dim`.
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalLaw {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(invalid("law needs at least one point of positive dimension"));
        }
        let m = points.len() / dim;
        if weights.len() != m {
            return Err(invalid(format!("{m} points but {} weights", weights.len())));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("support points must be finite"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(point.len(), point, vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Support sorted lexicographically with repeated points merged.
    pub fn merged(&self) -> Self {
        let d = self.dim;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| lex(self.point(i), self.point(j)));
        let mut points: Vec<f64> = Vec::with_capacity(self.points.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        for i in idx {
            let p = self.point(i);
            if !weights.is_empty() && &points[points.len() - d..] == p {
                *weights.last_mut().unwrap() += self.weights[i];
            } else {
                points.extend_from_slice(p);
                weights.push(self.weights[i]);
            }
        }
        Self {
            dim: d,
            points,
            weights,
        }
    }

    /// At most `cap` points: sort by first coordinate, split into `cap`
    /// strata of equal count, keep one seeded draw per stratum carrying the
    /// stratum's weight.
    pub fn stratified_subsample(&self, cap: usize, seed: u64) -> Self {
        if self.len() <= cap || cap == 0 {
            return self.clone();
        }
        let d = self.dim;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| lex(self.point(i), self.point(j)));
        let mut stream = KeyedRng::new(seed).stream(0, Channel::Aux(7));
        let m = self.len();
        let mut points = Vec::with_capacity(cap * d);
        let mut weights = Vec::with_capacity(cap);
        for s in 0..cap {
            let (lo, hi) = (s * m / cap, (s + 1) * m / cap);
            let pick = idx[lo + stream.rng().gen_range(0..hi - lo)];
            points.extend_from_slice(self.point(pick));
            weights.push(idx[lo..hi].iter().map(|&i| self.weights[i]).sum());
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            dim: d,
            points,
            weights,
        }
    }
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Uniform weights on `samples` (row-major, `dim` columns).
pub fn empirical_law(samples: &[f64], dim: usize) -> Result<EmpiricalLaw> {
    if dim == 0 || samples.is_empty() {
        return Err(invalid("empty sample set"));
    }
    let m = samples.len() / dim;
    EmpiricalLaw::new(dim, samples.to_vec(), vec![1.0 / m as f64; m])
}

/// Controls for the general-dimension solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlOptions {
    /// Points per law kept before the linear program (stratified subsampling).
    pub lp_cap: usize,
    pub seed: u64,
}

impl Default for BlOptions {
    fn default() -> Self {
        Self { lp_cap: 150, seed: 0 }
    }
}

/// Joint support of two laws with signed masses `a - b`, merged and sorted.
fn signed_support(a: &EmpiricalLaw, b: &EmpiricalLaw) -> (Vec<f64>, Vec<f64>) {
    let d = a.dim;
    let mut pts = a.points.clone();
    pts.extend_from_slice(&b.points);
    let mut w = a.weights.clone();
    w.extend(b.weights.iter().map(|v| -v));
    let joint = EmpiricalLaw {
        dim: d,
        points: pts,
        weights: w,
    }
    .merged();
    (joint.points, joint.weights)
}

pub fn bl_metric(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64> {
    bl_metric_with(a, b, &BlOptions::default())
}

pub fn bl_metric_with(a: &EmpiricalLaw, b: &EmpiricalLaw, opts: &BlOptions) -> Result<f64> {
    if a.dim != b.dim {
        return Err(invalid(format!("laws have dimensions {} and {}", a.dim, b.dim)));
    }
    if a.dim == 1 {
        let (x, c) = signed_support(a, b);
        return Ok(golden_max(|s| Ok(line_value(&x, &c, s)), 1e-12)?.max(0.0));
    }
    let a = a.stratified_subsample(opts.lp_cap, opts.seed);
    let b = b.stratified_subsample(opts.lp_cap, opts.seed ^ 0x9e37_79b9);
    bl_metric_lp(&a, &b)
}

/// Exact value by linear programming over all pairwise constraints, any dimension.
pub fn bl_metric_lp(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64> {
    if a.dim != b.dim {
        return Err(invalid(format!("laws have dimensions {} and {}", a.dim, b.dim)));
    }
    let d = a.dim;
    let (pts, c) = signed_support(a, b);
    let m = c.len();
    let mut dmat = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = dist(&pts[i * d..(i + 1) * d], &pts[j * d..(j + 1) * d]);
            dmat[i * m + j] = v;
            dmat[j * m + i] = v;
        }
    }
    Ok(golden_max(|s| lp_value(&c, &dmat, s), 1e-9)?.max(0.0))
}

/// Golden-section maximum of a concave function on `[0, 1]`; returns the best value seen.
fn golden_max(mut v: impl FnMut(f64) -> Result<f64>, tol: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = v(x1)?;
    let mut f2 = v(x2)?;
    let mut best = f1.max(f2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = v(x2)?;
            best = best.max(f2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = v(x1)?;
            best = best.max(f1);
        }
    }
    Ok(best)
}

/// Concave piecewise-linear function on `[lo, hi]` stored as segments `(length, slope)`.
///
/// `left` holds the increasing part (front = leftmost), `right` the
/// non-increasing part (front = next to the peak). Stored slopes are offset
/// by `shift` so adding a linear term is O(1).
struct ConcavePwl {
    left: VecDeque<(f64, f64)>,
    right: VecDeque<(f64, f64)>,
    shift: f64,
    /// Domain is `[-half_width, half_width]`.
    half_width: f64,
    value_lo: f64,
}

impl ConcavePwl {
    fn linear(width: f64, slope: f64) -> Self {
        let mut f = Self {
            left: VecDeque::new(),
            right: VecDeque::new(),
            shift: 0.0,
            half_width: 0.5 * width,
            value_lo: -0.5 * width * slope,
        };
        f.right.push_back((width, slope));
        f.rebalance();
        f
    }

    fn rebalance(&mut self) {
        while let Some(&(len, s)) = self.left.back() {
            if s + self.shift > 0.0 {
                break;
            }
            self.left.pop_back();
            self.right.push_front((len, s));
        }
        while let Some(&(len, s)) = self.right.front() {
            if s + self.shift <= 0.0 {
                break;
            }
            self.right.pop_front();
            self.left.push_back((len, s));
        }
    }

    fn add_slope(&mut self, c: f64) {
        self.shift += c;
        self.value_lo -= c * self.half_width;
        self.rebalance();
    }

    /// `v -> max_{|u - v| <= r} f(u)` followed by restriction to the original
    /// domain: widens the peak into a plateau of length `2r` and trims `r`
    /// from both ends.
    fn dilate_and_clip(&mut self, r: f64) {
        if r <= 0.0 {
            return;
        }
        self.right.push_front((2.0 * r, -self.shift));
        // trim r from the left end
        let mut rem = r;
        while rem > 0.0 {
            let deque = if self.left.is_empty() {
                &mut self.right
            } else {
                &mut self.left
            };
            let Some(seg) = deque.front_mut() else { break };
            let take = rem.min(seg.0);
            self.value_lo += take * (seg.1 + self.shift);
            seg.0 -= take;
            rem -= take;
            if seg.0 <= 0.0 {
                deque.pop_front();
            }
        }
        // trim r from the right end
        let mut rem = r;
        while rem > 0.0 {
            let deque = if self.right.is_empty() {
                &mut self.left
            } else {
                &mut self.right
            };
            let Some(seg) = deque.back_mut() else { break };
            let take = rem.min(seg.0);
            seg.0 -= take;
            rem -= take;
            if seg.0 <= 0.0 {
                deque.pop_back();
            }
        }
    }

    fn max(&self) -> f64 {
        self.value_lo + self.left.iter().map(|(len, s)| len * (s + self.shift)).sum::<f64>()
    }
}

/// Inner value `V(s)` on the line: `x` sorted and distinct, `c` the signed masses.
fn line_value(x: &[f64], c: &[f64], s: f64) -> f64 {
    if s <= 0.0 || x.is_empty() {
        return 0.0;
    }
    let kappa = 1.0 - s;
    let mut g = ConcavePwl::linear(2.0 * s, c[0]);
    for i in 1..x.len() {
        g.dilate_and_clip((kappa * (x[i] - x[i - 1])).min(2.0 * s));
        g.add_slope(c[i]);
    }
    g.max()
}

fn lp_value(c: &[f64], dmat: &[f64], s: f64) -> Result<f64> {
    let m = c.len();
    if s <= 0.0 {
        return Ok(0.0);
    }
    let kappa = 1.0 - s;
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = c.iter().map(|&ci| p.add_var(ci, (-s, s))).collect();
    for i in 0..m {
        for j in i + 1..m {
            let bound = kappa * dmat[i * m + j];
            // pairs further apart than the box allows are unconstrained
            if bound < 2.0 * s {
                p.add_constraint([(vars[i], 1.0), (vars[j], -1.0)], ComparisonOp::Le, bound);
                p.add_constraint([(vars[i], 1.0), (vars[j], -1.0)], ComparisonOp::Ge, -bound);
            }
        }
    }
    let sol = p.solve().map_err(|e| Error::Lp(e.to_string()))?;
    Ok(sol.objective())
}

/// Per-time distances between two ensembles over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawDistanceSeries {
    pub times: Vec<f64>,
    pub beta_values: Vec<f64>,
    pub sup_value: f64,
}

impl LawDistanceSeries {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "beta"])?;
        for (t, b) in self.times.iter().zip(&self.beta_values) {
            out.write_record([t.to_string(), b.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `beta` between the per-time laws across paths, at each of `times`.
pub fn uniform_law_distance(
    a: &StochasticEnsemble,
    b: &StochasticEnsemble,
    times: &[f64],
) -> Result<LawDistanceSeries> {
    uniform_law_distance_with(a, b, times, &BlOptions::default())
}

pub fn uniform_law_distance_with(
    a: &StochasticEnsemble,
    b: &StochasticEnsemble,
    times: &[f64],
    opts: &BlOptions,
) -> Result<LawDistanceSeries> {
    if a.dim() != b.dim() {
        return Err(invalid("ensembles differ in dimension"));
    }
    if times.is_empty() {
        return Err(invalid("no comparison times"));
    }
    let mut idx = Vec::with_capacity(times.len());
    for &t in times {
        match (a.grid().index_of(t), b.grid().index_of(t)) {
            (Some(i), Some(j)) => idx.push((i, j)),
            _ => return Err(Error::GridMismatch(format!("time {t} is not on both ensemble grids"))),
        }
    }
    let d = a.dim();
    let beta_values = idx
        .par_iter()
        .map(|&(i, j)| {
            let la = empirical_law(&a.slice_at(i), d)?;
            let lb = empirical_law(&b.slice_at(j), d)?;
            bl_metric_with(&la, &lb, opts)
        })
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let sup_value = beta_values.iter().copied().fold(0.0, f64::max);
    Ok(LawDistanceSeries {
        times: times.to_vec(),
        beta_values,
        sup_value,
    })
}

/// Spread of window-sup distances between independent ensembles of one equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl NoiseFloor {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("noise floor needs at least one pair"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = if samples.len() > 1 {
            (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self { samples, mean, std })
    }

    /// `pairs` sups over `times`; `make_pair(i)` returns two independent ensembles of the same law.
    pub fn calibrate(
        pairs: usize,
        times: &[f64],
        make_pair: impl Fn(usize) -> Result<(StochasticEnsemble, StochasticEnsemble)>,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(pairs);
        for i in 0..pairs {
            let (a, b) = make_pair(i)?;
            samples.push(uniform_law_distance(&a, &b, times)?.sup_value);
        }
        Self::from_samples(samples)
    }

    /// Within three standard deviations of the calibrated mean.
    pub fn contains(&self, value: f64) -> bool {
        value <= self.mean + 3.0 * self.std
    }
}

/// Expected `beta` between two independent `m`-samples of the standard normal law, per `m`.
pub fn gaussian_floor_table(ms: &[usize], reps: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    let rng = KeyedRng::new(seed);
    ms.iter()
        .map(|&m| {
            let mut acc = 0.0;
            for r in 0..reps {
                let mut s1 = rng.stream(r as u64, Channel::Aux(2 * m as u32));
                let mut s2 = rng.stream(r as u64, Channel::Aux(2 * m as u32 + 1));
                let a: Vec<f64> = (0..m).map(|_| s1.next_normal()).collect();
                let b: Vec<f64> = (0..m).map(|_| s2.next_normal()).collect();
                acc += bl_metric(&empirical_law(&a, 1)?, &empirical_law(&b, 1)?)?;
            }
            Ok((m, acc / reps as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law1(xs: &[f64]) -> EmpiricalLaw {
        empirical_law(xs, 1).unwrap()
    }

    #[test]
    fn point_masses_closed_form() {
        for d in [0.1, 1.0, 10.0, 100.0, 1e6] {
            let b = bl_metric(&law1(&[0.0]), &law1(&[d])).unwrap();
            assert!((b - 2.0 * d / (d + 2.0)).abs() < 1e-9, "d={d}: {b}");
        }
    }

    #[test]
    fn identical_and_duplicated_laws() {
        let a = law1(&[0.3, -1.0, 2.5]);
        assert_eq!(bl_metric(&a, &a).unwrap(), 0.0);
        assert!(bl_metric(&law1(&[1.5]), &law1(&[1.5, 1.5])).unwrap() < 1e-15);
    }

    #[test]
    fn weight_validation() {
        assert!(EmpiricalLaw::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(EmpiricalLaw::new(1, vec![0.0], vec![-1.0]).is_err());
        assert!(empirical_law(&[], 1).is_err());
        assert!(bl_metric(&law1(&[0.0]), &EmpiricalLaw::dirac(vec![0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn two_dimensional_point_masses() {
        let a = EmpiricalLaw::dirac(vec![0.0, 0.0]).unwrap();
        let b = EmpiricalLaw::dirac(vec![3.0, 4.0]).unwrap();
        let v = bl_metric(&a, &b).unwrap();
        assert!((v - 10.0 / 7.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn gaussian_samples_near_quantile_grid() {
        let mut s = KeyedRng::new(17).stream(0, Channel::Aux(0));
        let xs: Vec<f64> = (0..10_000).map(|_| s.next_normal()).collect();
        // quantile grid of the standard normal by bisection on erf-free CDF via cumulative Simpson
        let m = 2000;
        let q: Vec<f64> = (0..m).map(|i| normal_quantile((i as f64 + 0.5) / m as f64)).collect();
        let b = bl_metric(&law1(&xs), &law1(&q)).unwrap();
        assert!(b <= 0.05, "{b}");
    }

    fn normal_cdf(x: f64) -> f64 {
        // Simpson on [0, |x|] of the density
        let n = 400;
        let h = x.abs() / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = pdf(0.0) + pdf(x.abs());
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
        }
        let half = acc * h / 3.0;
        if x >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    fn normal_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn line_value_matches_lp_oracle_on_fixed_case() {
        let a = EmpiricalLaw::new(1, vec![0.0, 0.4, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let b = EmpiricalLaw::new(1, vec![0.1, 1.0, 3.5, -1.0], vec![0.25; 4]).unwrap();
        let (x, c) = signed_support(&a, &b);
        let m = x.len();
        let dmat: Vec<f64> = (0..m * m).map(|k| (x[k / m] - x[k % m]).abs()).collect();
        for s in [0.05, 0.2, 0.5, 0.77, 0.95] {
            let dp = line_value(&x, &c, s);
            let lp = lp_value(&c, &dmat, s).unwrap();
            assert!((dp - lp).abs() < 1e-9, "s={s}: {dp} vs {lp}");
        }
    }

    #[test]
    fn subsample_respects_cap_and_mass() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let l = law1(&xs).stratified_subsample(100, 3);
        assert_eq!(l.len(), 100);
        assert!((l.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(l, law1(&xs).stratified_subsample(100, 3));
    }

    #[test]
    fn small_displacement_is_linear() {
        let base: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let shifted = |delta: f64| base.iter().map(|x| x + delta).collect::<Vec<_>>();
        let b1 = bl_metric(&law1(&base), &law1(&shifted(1e-3))).unwrap();
        let b2 = bl_metric(&law1(&base), &law1(&shifted(2e-3))).unwrap();
        assert!((b1 - 1e-3).abs() < 1e-6 && (b2 / b1 - 2.0).abs() < 1e-3, "{b1} {b2}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dp_matches_lp_oracle(
            a in prop::collection::vec(-3.0f64..3.0, 1..12),
            b in prop::collection::vec(-3.0f64..3.0, 1..12),
        ) {
            let (la, lb) = (law1(&a), law1(&b));
            let dp = bl_metric(&la, &lb).unwrap();
            let lp = bl_metric_lp(&la, &lb).unwrap();
            prop_assert!((dp - lp).abs() < 1e-7, "{} vs {}", dp, lp);
        }

        #[test]
        fn metric_axioms(
            a in prop::collection::vec(-5.0f64..5.0, 1..30),
            b in prop::collection::vec(-5.0f64..5.0, 1..30),
            c in prop::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let (la, lb, lc) = (law1(&a), law1(&b), law1(&c));
            let ab = bl_metric(&la, &lb).unwrap();
            let ba = bl_metric(&lb, &la).unwrap();
            let bc = bl_metric(&lb, &lc).unwrap();
            let ac = bl_metric(&la, &lc).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-8);
            prop_assert!((0.0..=2.0).contains(&ab));
        }
    }
}
