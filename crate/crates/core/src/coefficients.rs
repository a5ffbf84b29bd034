//! Time- and state-dependent coefficient fields `F(t, x)` with declared
//! growth and Lipschitz constants, plus randomized audits of those constants.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::path::{dist, norm};

pub type Evaluator = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Declared constants of a coefficient field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldConstants {
    /// `sup_t |F(t, 0)|`
    pub a0: f64,
    /// Global Lipschitz constant in `x`, uniform in `t`.
    pub lipschitz: f64,
    /// Linear-growth slope `M` in `|F(t, x)| <= a0 + M |x|`.
    pub growth: f64,
    /// Optional declared modulus for continuity in `t` on bounded sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuity_modulus: Option<f64>,
}

#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    eval: Evaluator,
    constants: FieldConstants,
    time_shift: f64,
    label: String,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .field("time_shift", &self.time_shift)
            .finish()
    }
}

impl CoefficientField {
    pub fn new<F>(label: impl Into<String>, dim: usize, constants: FieldConstants, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(invalid("coefficient dimension must be positive"));
        }
        for (name, v) in [
            ("a0", constants.a0),
            ("lipschitz", constants.lipschitz),
            ("growth", constants.growth),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("declared {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            dim,
            eval: Arc::new(f),
            constants,
            time_shift: 0.0,
            label: label.into(),
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new("zero", dim, FieldConstants::default(), |_, _, out| out.fill(0.0)).expect("dim > 0")
    }

    /// `F(t, x) = value` for all `t, x`.
    pub fn constant(value: Vec<f64>) -> Result<Self> {
        let a0 = norm(&value);
        let constants = FieldConstants {
            a0,
            ..Default::default()
        };
        Self::new("constant", value.len(), constants, move |_, _, out| {
            out.copy_from_slice(&value)
        })
    }

    /// Scalar field from a closure `(t, x) -> F(t, x)`.
    pub fn scalar<F>(label: impl Into<String>, constants: FieldConstants, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(label, 1, constants, move |t, x, out| out[0] = f(t, x[0]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> &FieldConstants {
        &self.constants
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn time_shift(&self) -> f64 {
        self.time_shift
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.eval)(t + self.time_shift, x, out)
    }

    /// Evaluates and rejects non-finite output.
    pub fn eval_checked(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.eval(t, x, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Evaluator(format!(
                "{} returned non-finite value at t = {t}",
                self.label
            )))
        }
    }

    /// The time translate `F^tau(t, x) = F(t + tau, x)`; constants carry over.
    pub fn shifted(&self, tau: f64) -> Self {
        let mut s = self.clone();
        s.time_shift += tau;
        s
    }

    pub fn with_constants(mut self, constants: FieldConstants) -> Self {
        self.constants = constants;
        self
    }

    /// Randomized check that the declared constants dominate what the field does.
    pub fn audit(&self, cfg: &AuditConfig) -> Result<AuditReport> {
        self.audit_with(cfg, true)
    }

    /// As [`CoefficientField::audit`]; with `check_lipschitz = false` the
    /// Lipschitz ratio is only recorded, for fields that are merely locally Lipschitz.
    pub fn audit_with(&self, cfg: &AuditConfig, check_lipschitz: bool) -> Result<AuditReport> {
        let d = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let zero = vec![0.0; d];
        let mut fx = vec![0.0; d];
        let mut fy = vec![0.0; d];
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut report = AuditReport::default();

        for i in 0..cfg.samples {
            let t = cfg.t_range[0] + (cfg.t_range[1] - cfg.t_range[0]) * rng.gen::<f64>();
            self.eval_checked(t, &zero, &mut fx)?;
            report.a0 = report.a0.max(norm(&fx));

            random_in_ball(&mut rng, cfg.radius, &mut x);
            // alternate between far pairs and nearby pairs
            if i % 2 == 0 {
                random_in_ball(&mut rng, cfg.radius, &mut y);
            } else {
                let eps = cfg.radius * 1e-3;
                for (yi, xi) in y.iter_mut().zip(&x) {
                    *yi = xi + eps * rng.sample::<f64, _>(StandardNormal);
                }
            }
            self.eval_checked(t, &x, &mut fx)?;
            self.eval_checked(t, &y, &mut fy)?;
            let dxy = dist(&x, &y);
            if dxy > 0.0 {
                report.lipschitz = report.lipschitz.max(dist(&fx, &fy) / dxy);
            }
            let nx = norm(&x);
            if nx > 0.0 {
                report.growth = report.growth.max((norm(&fx) - self.constants.a0).max(0.0) / nx);
            }
        }

        let c = &self.constants;
        let slack = |declared: f64| declared * (1.0 + 1e-9) + 1e-12;
        let mut failures = Vec::new();
        if report.a0 > slack(c.a0) {
            failures.push(format!("|F(t,0)| reached {} > declared A0 {}", report.a0, c.a0));
        }
        if check_lipschitz && report.lipschitz > slack(c.lipschitz) {
            failures.push(format!(
                "Lipschitz ratio reached {} > declared {}",
                report.lipschitz, c.lipschitz
            ));
        }
        if report.growth > slack(c.growth) {
            failures.push(format!(
                "growth ratio reached {} > declared M {}",
                report.growth, c.growth
            ));
        }
        if failures.is_empty() {
            Ok(report)
        } else {
            Err(Error::Audit(format!("{}: {}", self.label, failures.join("; "))))
        }
    }
}

/// Where and how densely the audit probes a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub t_range: [f64; 2],
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            t_range: [-200.0, 200.0],
            radius: 5.0,
            samples: 20_000,
            seed: 0x5eed,
        }
    }
}

/// Largest values seen during an audit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub a0: f64,
    pub lipschitz: f64,
    pub growth: f64,
}

pub(crate) fn random_in_ball(rng: &mut impl Rng, radius: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let n = norm(out);
    let d = out.len() as f64;
    let r = radius * rng.gen::<f64>().powf(1.0 / d);
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v *= r / n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn saturating(lip: f64) -> CoefficientField {
        let c = FieldConstants {
            a0: 0.0,
            lipschitz: lip,
            growth: lip,
            continuity_modulus: None,
        };
        CoefficientField::scalar("sat", c, |t, x| t.cos() * x / (1.0 + x * x)).unwrap()
    }

    #[test]
    fn audit_accepts_valid_constants() {
        let r = saturating(1.0).audit(&AuditConfig::default()).unwrap();
        assert!(r.lipschitz > 0.9 && r.lipschitz <= 1.0);
    }

    #[test]
    fn audit_rejects_understated_lipschitz() {
        let err = saturating(0.5).audit(&AuditConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Audit(_)));
    }

    #[test]
    fn shift_translates_time() {
        let f = CoefficientField::scalar("sin", FieldConstants::default(), |t, _| t.sin()).unwrap();
        let g = f.shifted(1.0).shifted(0.5);
        let mut a = [0.0];
        let mut b = [0.0];
        g.eval(0.2, &[0.0], &mut a);
        f.eval(1.7, &[0.0], &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_output_is_reported() {
        let f = CoefficientField::scalar("bad", FieldConstants::default(), |_, x| 1.0 / x).unwrap();
        let mut out = [0.0];
        assert!(matches!(
            f.eval_checked(0.0, &[0.0], &mut out),
            Err(Error::Evaluator(_))
        ));
    }

    #[test]
    fn negative_constants_rejected() {
        let c = FieldConstants {
            lipschitz: -1.0,
            ..Default::default()
        };
        assert!(CoefficientField::scalar("x", c, |_, x| x).is_err());
    }
}
