//! Sine-Galerkin reduction of a semilinear heat equation on `[0, 1]` with
//! Dirichlet conditions and Nemytskii coefficients `u -> f(t, u(.))`.
//!
//! Mode vectors `a` represent `u = sum_n a_n sqrt(2) sin(n pi x)`, so the
//! Euclidean norm of `a` is the `L^2(0, 1)` norm of `u`. Coefficients are
//! evaluated by collocation on the interior points `x_j = j / (P + 1)`.

use std::cell::RefCell;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{random_in_ball, CoefficientField, FieldConstants};
use crate::error::{invalid, Result};
use crate::operator::SpectralOperator;

/// Scalar pointwise map `(t, u) -> f(t, u)` with its pointwise constants.
#[derive(Clone)]
pub struct PointwiseField {
    pub label: String,
    pub f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub constants: FieldConstants,
}

impl PointwiseField {
    pub fn new(
        label: impl Into<String>,
        constants: FieldConstants,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
            constants,
        }
    }
}

/// `sqrt(2) sin(n pi x_j)`, row per mode.
struct SineTable {
    points: usize,
    table: Vec<f64>,
}

impl SineTable {
    fn new(modes: usize, points: usize) -> Self {
        let mut table = Vec::with_capacity(modes * points);
        for n in 1..=modes {
            for j in 1..=points {
                table.push(SQRT_2 * (n as f64 * PI * j as f64 / (points + 1) as f64).sin());
            }
        }
        Self { points, table }
    }

    fn to_physical(&self, a: &[f64], u: &mut [f64]) {
        u.fill(0.0);
        for (n, &an) in a.iter().enumerate() {
            let row = &self.table[n * self.points..(n + 1) * self.points];
            for (uj, s) in u.iter_mut().zip(row) {
                *uj += an * s;
            }
        }
    }

    fn to_modes(&self, v: &[f64], a: &mut [f64]) {
        let w = 1.0 / (self.points + 1) as f64;
        for (n, an) in a.iter_mut().enumerate() {
            let row = &self.table[n * self.points..(n + 1) * self.points];
            *an = w * row.iter().zip(v).map(|(s, x)| s * x).sum::<f64>();
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

fn nemytskii(table: Arc<SineTable>, field: &PointwiseField, n_modes: usize) -> Result<CoefficientField> {
    let f = field.f.clone();
    let p = table.points;
    // the collocated map is a contraction of the pointwise one, so pointwise constants carry over
    CoefficientField::new(
        format!("{} (collocated, {n_modes} modes)", field.label),
        n_modes,
        field.constants,
        move |t, a, out| {
            SCRATCH.with(|cell| {
                let mut u = cell.borrow_mut();
                u.resize(p, 0.0);
                table.to_physical(a, &mut u);
                u.iter_mut().for_each(|x| *x = f(t, *x));
                table.to_modes(&u, out);
            })
        },
    )
}

/// Operator with `lambda_n = n^2 pi^2` and the collocated Nemytskii fields.
pub fn galerkin_reduce(
    n_modes: usize,
    physical_points: usize,
    drift: &PointwiseField,
    diffusion: &PointwiseField,
) -> Result<(SpectralOperator, CoefficientField, CoefficientField)> {
    if n_modes == 0 {
        return Err(invalid("need at least one mode"));
    }
    if physical_points < n_modes {
        return Err(invalid(format!(
            "{n_modes} modes cannot be resolved on {physical_points} collocation points"
        )));
    }
    let op = SpectralOperator::dirichlet_laplacian(n_modes)?;
    let table = Arc::new(SineTable::new(n_modes, physical_points));
    let f = nemytskii(table.clone(), drift, n_modes)?;
    let g = nemytskii(table, diffusion, n_modes)?;
    Ok((op, f, g))
}

/// Sup of `int_0^1 |f(t, u(x))|^{2 + alpha} dx` over sampled `t` and `||u|| <= radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub alpha: f64,
    pub radius: f64,
    pub samples: usize,
    pub sup_moment: f64,
    /// `(sup |f|)^{2 + alpha}` when the pointwise coefficient is bounded.
    pub bound: Option<f64>,
    pub passed: bool,
}

pub fn uniform_integrability_probe(
    field: &PointwiseField,
    n_modes: usize,
    physical_points: usize,
    alpha: f64,
    radius: f64,
    pointwise_sup: Option<f64>,
    samples: usize,
    seed: u64,
) -> Result<IntegrabilityReport> {
    if !(alpha > 0.0 && radius >= 0.0) || physical_points < n_modes || n_modes == 0 {
        return Err(invalid("invalid integrability probe parameters"));
    }
    let table = SineTable::new(n_modes, physical_points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![0.0; n_modes];
    let mut u = vec![0.0; physical_points];
    let mut sup_moment: f64 = 0.0;
    let w = 1.0 / (physical_points + 1) as f64;
    for _ in 0..samples {
        let t = rng.gen_range(-200.0..200.0);
        random_in_ball(&mut rng, radius, &mut a);
        table.to_physical(&a, &mut u);
        let m: f64 = u.iter().map(|&x| (field.f)(t, x).abs().powf(2.0 + alpha)).sum::<f64>() * w;
        sup_moment = sup_moment.max(m);
    }
    let bound = pointwise_sup.map(|s| s.powf(2.0 + alpha));
    let passed = sup_moment.is_finite() && bound.is_none_or(|b| sup_moment <= b * (1.0 + 1e-12));
    Ok(IntegrabilityReport {
        alpha,
        radius,
        samples,
        sup_moment,
        bound,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::AuditConfig;

    fn linear(c: f64) -> PointwiseField {
        let k = FieldConstants {
            lipschitz: c.abs(),
            growth: c.abs(),
            ..Default::default()
        };
        PointwiseField::new("linear", k, move |_, u| c * u)
    }

    fn example_drift() -> PointwiseField {
        let k = FieldConstants {
            a0: 0.0,
            lipschitz: 2.0 / 3.0,
            growth: 2.0 / 3.0,
            continuity_modulus: None,
        };
        PointwiseField::new("drift", k, |t, u| (t.sin() + (3f64.sqrt() * t).cos()) * u.sin() / 3.0)
    }

    #[test]
    fn linear_map_scales_modes() {
        let (_, f, _) = galerkin_reduce(4, 16, &linear(2.5), &linear(0.0)).unwrap();
        let a = [1.0, 0.0, -0.3, 0.7];
        let mut out = [0.0; 4];
        f.eval(0.0, &a, &mut out);
        for (o, x) in out.iter().zip(a) {
            assert!((o - 2.5 * x).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_state_maps_to_zero() {
        let (op, f, _) = galerkin_reduce(6, 24, &example_drift(), &linear(1.0)).unwrap();
        let mut out = [1.0; 6];
        f.eval(1.3, &[0.0; 6], &mut out);
        assert!(out.iter().all(|v| *v == 0.0));
        assert!((op.mode_rates()[1] - 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn collocated_lipschitz_within_pointwise() {
        let (_, f, _) = galerkin_reduce(8, 32, &example_drift(), &linear(1.0)).unwrap();
        let r = f
            .audit(&AuditConfig {
                samples: 4000,
                ..Default::default()
            })
            .unwrap();
        assert!(r.lipschitz <= 2.0 / 3.0);
    }

    #[test]
    fn aliasing_guard() {
        assert!(galerkin_reduce(10, 8, &linear(1.0), &linear(1.0)).is_err());
    }

    #[test]
    fn integrability_probe_is_bounded() {
        let r = uniform_integrability_probe(&example_drift(), 8, 32, 1.0, 5.0, Some(2.0 / 3.0), 500, 1).unwrap();
        assert!(r.passed && r.sup_moment > 0.0);
    }
}
