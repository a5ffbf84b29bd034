//! Generators for periodic, quasi-periodic and the two classic
//! non-almost-periodic recurrent test functions.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::UniformGrid;
use crate::path::{SampledPath, Signal};

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceFunctionSpec {
    Constant {
        value: f64,
    },
    /// `amplitude * cos(2 pi t / period + phase)`.
    Periodic {
        period: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * Phi(nu_1 t, ..., nu_k t)` where `Phi` is given by a
    /// `resolution^k` table over the torus `[0, 2 pi)^k` (last index fastest).
    QuasiPeriodic {
        frequencies: Vec<f64>,
        resolution: usize,
        table: Vec<f64>,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude / (2 + cos t + cos(sqrt 2 t))`: Levitan almost periodic, unbounded.
    LevitanExample {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude * sin(1 / (2 + cos t + cos(sqrt 2 t)))`: almost automorphic, not almost periodic.
    BochnerExample {
        #[serde(default = "one")]
        amplitude: f64,
    },
}

impl ReferenceFunctionSpec {
    /// Tabulates `phi` on the torus grid for a quasi-periodic spec.
    pub fn quasi_periodic_from_fn(
        frequencies: Vec<f64>,
        resolution: usize,
        amplitude: f64,
        phi: impl Fn(&[f64]) -> f64,
    ) -> Self {
        let k = frequencies.len();
        let total = resolution.pow(k as u32);
        let mut theta = vec![0.0; k];
        let table = (0..total)
            .map(|mut idx| {
                for j in (0..k).rev() {
                    theta[j] = 2.0 * PI * (idx % resolution) as f64 / resolution as f64;
                    idx /= resolution;
                }
                phi(&theta)
            })
            .collect();
        ReferenceFunctionSpec::QuasiPeriodic {
            frequencies,
            resolution,
            table,
            amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { value } if !value.is_finite() => Err(invalid("constant must be finite")),
            Self::Periodic { period, .. } if !(*period > 0.0 && period.is_finite()) => {
                Err(invalid(format!("period must be positive, got {period}")))
            }
            Self::QuasiPeriodic {
                frequencies,
                resolution,
                table,
                ..
            } => {
                if frequencies.is_empty() {
                    return Err(invalid("quasi-periodic frequency list is empty"));
                }
                if frequencies.len() > 6 {
                    return Err(invalid("at most 6 torus frequencies are supported"));
                }
                if *resolution < 2 {
                    return Err(invalid("torus table resolution must be at least 2"));
                }
                let expected = resolution.pow(frequencies.len() as u32);
                if table.len() != expected {
                    return Err(invalid(format!(
                        "torus table has {} entries, expected {expected}",
                        table.len()
                    )));
                }
                if table.iter().chain(frequencies).any(|v| !v.is_finite()) {
                    return Err(invalid("torus table and frequencies must be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<ReferenceFunction> {
        self.validate()?;
        Ok(ReferenceFunction { spec: self.clone() })
    }
}

/// Validated reference function, usable as a [`Signal`].
#[derive(Clone, Debug)]
pub struct ReferenceFunction {
    spec: ReferenceFunctionSpec,
}

/// `2 + cos t + cos(sqrt 2 t)`.
#[inline]
pub fn levitan_denominator(t: f64) -> f64 {
    2.0 + t.cos() + (SQRT_2 * t).cos()
}

impl ReferenceFunction {
    pub fn spec(&self) -> &ReferenceFunctionSpec {
        &self.spec
    }

    pub fn value(&self, t: f64) -> f64 {
        match &self.spec {
            ReferenceFunctionSpec::Constant { value } => *value,
            ReferenceFunctionSpec::Periodic {
                period,
                amplitude,
                phase,
            } => amplitude * (2.0 * PI * t / period + phase).cos(),
            ReferenceFunctionSpec::QuasiPeriodic {
                frequencies,
                resolution,
                table,
                amplitude,
            } => amplitude * torus_lookup(frequencies, *resolution, table, t),
            ReferenceFunctionSpec::LevitanExample { amplitude } => amplitude / levitan_denominator(t),
            ReferenceFunctionSpec::BochnerExample { amplitude } => amplitude * (1.0 / levitan_denominator(t)).sin(),
        }
    }
}

impl Signal for ReferenceFunction {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        out[0] = self.value(t);
    }
}

/// Multilinear interpolation of the torus table with periodic wrap.
fn torus_lookup(freqs: &[f64], res: usize, table: &[f64], t: f64) -> f64 {
    let k = freqs.len();
    let cell = 2.0 * PI / res as f64;
    let mut base = [0usize; 6];
    let mut frac = [0.0f64; 6];
    for j in 0..k {
        let x = (freqs[j] * t).rem_euclid(2.0 * PI) / cell;
        let i = x.floor();
        base[j] = (i as usize) % res;
        frac[j] = x - i;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << k) {
        let mut weight = 1.0;
        let mut idx = 0usize;
        for j in 0..k {
            let up = (corner >> j) & 1 == 1;
            weight *= if up { frac[j] } else { 1.0 - frac[j] };
            idx = idx * res + if up { (base[j] + 1) % res } else { base[j] };
        }
        if weight != 0.0 {
            acc += weight * table[idx];
        }
    }
    acc
}

/// Samples the reference function on `grid`.
pub fn make_reference(spec: &ReferenceFunctionSpec, grid: UniformGrid) -> Result<SampledPath> {
    let f = spec.build()?;
    SampledPath::from_scalar_fn(grid, |t| f.value(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> UniformGrid {
        UniformGrid::spanning(-10.0, 10.0, 0.01).unwrap()
    }

    #[test]
    fn levitan_at_zero() {
        let p = make_reference(&ReferenceFunctionSpec::LevitanExample { amplitude: 1.0 }, grid()).unwrap();
        let mut v = [0.0];
        p.value_at(0.0, &mut v).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bochner_at_zero() {
        let f = ReferenceFunctionSpec::BochnerExample { amplitude: 1.0 }
            .build()
            .unwrap();
        assert!((f.value(0.0) - 0.25f64.sin()).abs() < 1e-15);
        assert!((f.value(0.0) - 0.247404).abs() < 1e-6);
    }

    #[test]
    fn periodic_repeats() {
        let f = ReferenceFunctionSpec::Periodic {
            period: 2.0 * PI,
            amplitude: 1.0,
            phase: 0.3,
        }
        .build()
        .unwrap();
        for t in [-3.0, 0.0, 1.7, 8.2] {
            assert!((f.value(t) - f.value(t + 2.0 * PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn quasi_periodic_table_reproduces_trig_sum() {
        let spec =
            ReferenceFunctionSpec::quasi_periodic_from_fn(vec![1.0, SQRT_2], 256, 1.0, |th| th[0].cos() + th[1].cos());
        let f = spec.build().unwrap();
        for t in [0.0f64, 0.37, 5.0, -12.3, 100.0] {
            let exact = t.cos() + (SQRT_2 * t).cos();
            // bilinear interpolation error ~ cell^2 / 8 per coordinate
            assert!((f.value(t) - exact).abs() < 2.0 * (2.0 * PI / 256.0f64).powi(2) / 8.0 + 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(ReferenceFunctionSpec::Periodic {
            period: 0.0,
            amplitude: 1.0,
            phase: 0.0
        }
        .build()
        .is_err());
        assert!(ReferenceFunctionSpec::QuasiPeriodic {
            frequencies: vec![],
            resolution: 4,
            table: vec![],
            amplitude: 1.0
        }
        .build()
        .is_err());
        assert!(ReferenceFunctionSpec::QuasiPeriodic {
            frequencies: vec![1.0],
            resolution: 4,
            table: vec![0.0; 3],
            amplitude: 1.0
        }
        .build()
        .is_err());
    }

    #[test]
    fn spec_json_shape() {
        let s: ReferenceFunctionSpec = serde_json::from_str(r#"{"kind":"periodic","period":3.0}"#).unwrap();
        assert_eq!(
            s,
            ReferenceFunctionSpec::Periodic {
                period: 3.0,
                amplitude: 1.0,
                phase: 0.0
            }
        );
    }
}
