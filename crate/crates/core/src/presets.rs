//! The two worked examples, the fixtures used by the verification suite,
//! and coefficient fields assembled from configuration terms.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientField, FieldConstants};
use crate::ensemble::InitialLaw;
use crate::error::{invalid, Result};
use crate::galerkin::{galerkin_reduce, PointwiseField};
use crate::operator::SpectralOperator;
use crate::reference::{levitan_denominator, ReferenceFunctionSpec};

/// `(cos t + sin(sqrt 2 t)) / (4 + cos(sqrt 3 t))`, bounded by 2/3.
pub fn q1(t: f64) -> f64 {
    (t.cos() + (SQRT_2 * t).sin()) / (4.0 + (3f64.sqrt() * t).cos())
}

/// `sin(1 / (2 + cos t + cos(sqrt 2 t)))`.
pub fn q2(t: f64) -> f64 {
    (1.0 / levitan_denominator(t)).sin()
}

fn saturating(y: f64) -> f64 {
    y / (y * y + 1.0)
}

/// A complete system: operator, coefficients and the initial laws used by default.
#[derive(Clone, Debug)]
pub struct PresetSystem {
    pub name: String,
    pub op: SpectralOperator,
    pub drift: CoefficientField,
    pub diffusion: CoefficientField,
    pub initial: InitialLaw,
    pub initial_pair: [InitialLaw; 2],
}

impl PresetSystem {
    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// `max(A0)`, `max(L)` and `max(M)` over drift and diffusion.
    pub fn declared(&self) -> FieldConstants {
        let (f, g) = (self.drift.constants(), self.diffusion.constants());
        FieldConstants {
            a0: f.a0.max(g.a0),
            lipschitz: f.lipschitz.max(g.lipschitz),
            growth: f.growth.max(g.growth),
            continuity_modulus: None,
        }
    }
}

fn scalar_pair(x: f64) -> [InitialLaw; 2] {
    [
        InitialLaw::Dirac { value: vec![x] },
        InitialLaw::Dirac { value: vec![-x] },
    ]
}

/// Declared constants of the first example. `A0 = 0` because both
/// coefficients vanish at `y = 0`; `L` and `M` are the analytic bounds
/// `sup|q1| * Lip(y / (y^2 + 1)) = 2/3` and `sup|q2| / 2 <= 1/2`, see
/// `examples/derive_example1_constants.rs`.
pub const EXAMPLE1_CONSTANTS: FieldConstants = FieldConstants {
    a0: 0.0,
    lipschitz: 2.0 / 3.0,
    growth: 2.0 / 3.0,
    continuity_modulus: None,
};

/// `dy = (-5y + q1(t) y / (y^2 + 1)) dt + (y/2) q2(t) dW`.
pub fn example1() -> Result<PresetSystem> {
    let c = EXAMPLE1_CONSTANTS;
    Ok(PresetSystem {
        name: "example1".into(),
        op: SpectralOperator::scalar(5.0)?,
        drift: CoefficientField::scalar("q1(t) y/(y^2+1)", c, |t, y| q1(t) * saturating(y))?,
        diffusion: CoefficientField::scalar("y q2(t)/2", c, |t, y| 0.5 * y * q2(t))?,
        initial: InitialLaw::Gaussian {
            mean: vec![0.0],
            std: vec![2.0],
        },
        initial_pair: scalar_pair(1.0),
    })
}

/// The first example with the additive forcing `q1` in the drift and `q2`
/// in the diffusion, so the bounded solution is not identically zero.
pub fn example1_forced() -> Result<PresetSystem> {
    let c = FieldConstants {
        a0: 1.0,
        ..EXAMPLE1_CONSTANTS
    };
    let mut s = example1()?;
    s.name = "example1_forced".into();
    s.drift = CoefficientField::scalar("q1(t) (y/(y^2+1) + 1)", c, |t, y| q1(t) * (saturating(y) + 1.0))?;
    s.diffusion = CoefficientField::scalar("q2(t) (y/2 + 1)", c, |t, y| q2(t) * (0.5 * y + 1.0))?;
    Ok(s)
}

/// Pointwise coefficients of the stochastic heat equation example.
pub fn example2_pointwise() -> (PointwiseField, PointwiseField) {
    // |sin t + cos(sqrt 3 t)| / 3 <= 2/3 bounds both the slope and the size in u
    let fc = FieldConstants {
        a0: 0.0,
        lipschitz: 1.0,
        growth: 1.0,
        continuity_modulus: None,
    };
    let f = PointwiseField::new("(sin t + cos(sqrt3 t)) sin(u)/3", fc, |t, u| {
        (t.sin() + (3f64.sqrt() * t).cos()) * u.sin() / 3.0
    });
    let g = PointwiseField::new("u/(u^2+1) cos(1/(2 + sin t + sin(sqrt2 t)))", fc, |t, u| {
        saturating(u) * (1.0 / (2.0 + t.sin() + (SQRT_2 * t).sin())).cos()
    });
    (f, g)
}

/// Galerkin reduction of the heat equation example on `n_modes` sine modes.
pub fn example2(n_modes: usize, physical_points: usize) -> Result<PresetSystem> {
    let (f, g) = example2_pointwise();
    let (op, drift, diffusion) = galerkin_reduce(n_modes, physical_points, &f, &g)?;
    // u0(x) = sin(pi x) has unit first-mode coefficient 1/sqrt 2
    let mut first = vec![0.0; n_modes];
    first[0] = 1.0 / SQRT_2;
    let neg: Vec<f64> = first.iter().map(|v| -v).collect();
    Ok(PresetSystem {
        name: "example2".into(),
        op,
        drift,
        diffusion,
        initial: InitialLaw::Dirac { value: first.clone() },
        initial_pair: [InitialLaw::Dirac { value: first }, InitialLaw::Dirac { value: neg }],
    })
}

/// Scalar `nu = 5` system with `A0 = 1`, `M = 0.2` and `x0 ~ N(0, 4)`.
pub fn dissipative_fixture() -> Result<PresetSystem> {
    let c = FieldConstants {
        a0: 1.0,
        lipschitz: 0.2,
        growth: 0.2,
        continuity_modulus: None,
    };
    Ok(PresetSystem {
        name: "dissipative".into(),
        op: SpectralOperator::scalar(5.0)?,
        drift: CoefficientField::scalar("(cos t + sin(sqrt2 t))/2 + 0.2 sin x", c, |t, x| {
            0.5 * (t.cos() + (SQRT_2 * t).sin()) + 0.2 * x.sin()
        })?,
        diffusion: CoefficientField::scalar("q2(t) + 0.2 x cos t", c, |t, x| q2(t) + 0.2 * x * t.cos())?,
        initial: InitialLaw::Gaussian {
            mean: vec![0.0],
            std: vec![2.0],
        },
        initial_pair: scalar_pair(2.0),
    })
}

/// `2 pi`-periodic scalar system for checks with exact periods.
pub fn periodic_fixture() -> Result<PresetSystem> {
    let cf = FieldConstants {
        a0: 0.5,
        lipschitz: 1.0 / 3.0,
        growth: 1.0 / 3.0,
        continuity_modulus: None,
    };
    let cg = FieldConstants {
        a0: 0.5,
        lipschitz: 0.25,
        growth: 0.25,
        continuity_modulus: None,
    };
    Ok(PresetSystem {
        name: "periodic".into(),
        op: SpectralOperator::scalar(5.0)?,
        drift: CoefficientField::scalar("cos t (1/2 + sin(y)/3)", cf, |t, y| t.cos() * (0.5 + y.sin() / 3.0))?,
        diffusion: CoefficientField::scalar("sin t/2 + y cos t/4", cg, |t, y| 0.5 * t.sin() + 0.25 * y * t.cos())?,
        initial: InitialLaw::zero(1),
        initial_pair: scalar_pair(1.0),
    })
}

/// What `list_presets` reports about a preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetDescriptor {
    pub name: String,
    pub equation: String,
    pub operator: String,
    pub stability_constant: f64,
    pub nu: f64,
    pub declared: FieldConstants,
    pub notes: Vec<String>,
}

pub fn list_presets() -> Vec<PresetDescriptor> {
    vec![
        PresetDescriptor {
            name: "example1".into(),
            equation: "dy = (-5y + (cos t + sin(sqrt2 t))/(4 + cos(sqrt3 t)) * y/(y^2+1)) dt \
                       + (y/2) sin(1/(2 + cos t + cos(sqrt2 t))) dW"
                .into(),
            operator: "scalar, nu = 5".into(),
            stability_constant: 1.0,
            nu: 5.0,
            declared: EXAMPLE1_CONSTANTS,
            notes: vec![
                "A0 and M derived by brute-force maximization (examples/derive_example1_constants.rs)".into(),
                "joint Levitan almost periodicity of (f, g) is asserted, not proved; recurrence_scan reports finite-window evidence".into(),
                "A0 = 0 makes the bounded solution identically zero".into(),
            ],
        },
        PresetDescriptor {
            name: "example2".into(),
            equation: "u_t = u_xx + (sin t + cos(sqrt3 t)) sin(u)/3 \
                       + u/(u^2+1) cos(1/(2 + sin t + sin(sqrt2 t))) W_t on (0, 1), u = 0 at x = 0, 1"
                .into(),
            operator: "Dirichlet Laplacian, lambda_n = n^2 pi^2, Galerkin on n_modes sine modes".into(),
            stability_constant: 1.0,
            nu: PI * PI,
            declared: example2_pointwise().0.constants,
            notes: vec![
                "declared L = 1 for both coefficients; the drift alone is 2/3-Lipschitz".into(),
                "coefficients are collocated on physical_points interior points, n_modes <= physical_points".into(),
                "uniform integrability holds because the drift is bounded by 2/3".into(),
            ],
        },
    ]
}

/// Time factor of a configured coefficient term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum TimeFactor {
    #[default]
    One,
    Cos {
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    Reference {
        spec: ReferenceFunctionSpec,
    },
    Q1,
    Q2,
}

/// State factor of a configured coefficient term, applied pointwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMap {
    #[default]
    One,
    Identity,
    Sin,
    /// `x / (x^2 + 1)`
    Saturating,
}

impl StateMap {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Identity => x,
            Self::Sin => x.sin(),
            Self::Saturating => saturating(x),
        }
    }
}

/// `scale * time(t) * state(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub scale: f64,
    #[serde(default)]
    pub time: TimeFactor,
    #[serde(default)]
    pub state: StateMap,
}

type TimeFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Sum of terms with the constants the user declares for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomField {
    pub constants: FieldConstants,
    pub terms: Vec<Term>,
}

impl CustomField {
    /// Pointwise scalar map `(t, x) -> sum of terms`.
    pub fn pointwise(&self, label: &str) -> Result<PointwiseField> {
        let mut parts: Vec<(f64, TimeFn, StateMap)> = Vec::new();
        for term in &self.terms {
            if !term.scale.is_finite() {
                return Err(invalid(format!("{label}: term scale must be finite")));
            }
            let time: TimeFn = match &term.time {
                TimeFactor::One => Box::new(|_| 1.0),
                &TimeFactor::Cos { freq, phase } => Box::new(move |t| (freq * t + phase).cos()),
                TimeFactor::Reference { spec } => {
                    let r = spec.build()?;
                    Box::new(move |t| r.value(t))
                }
                TimeFactor::Q1 => Box::new(q1),
                TimeFactor::Q2 => Box::new(q2),
            };
            parts.push((term.scale, time, term.state));
        }
        let parts = Arc::new(parts);
        Ok(PointwiseField::new(label, self.constants, move |t, x| {
            parts.iter().map(|(s, time, state)| s * time(t) * state.apply(x)).sum()
        }))
    }
}

/// Scalar system with coefficients built from terms.
pub fn custom_scalar(nu: f64, drift: &CustomField, diffusion: &CustomField) -> Result<PresetSystem> {
    let scalar = |p: PointwiseField| {
        let f = p.f.clone();
        CoefficientField::scalar(p.label, p.constants, move |t, x| f(t, x))
    };
    Ok(PresetSystem {
        name: "custom".into(),
        op: SpectralOperator::scalar(nu)?,
        drift: scalar(drift.pointwise("drift")?)?,
        diffusion: scalar(diffusion.pointwise("diffusion")?)?,
        initial: InitialLaw::Gaussian {
            mean: vec![0.0],
            std: vec![1.0],
        },
        initial_pair: scalar_pair(1.0),
    })
}

/// Heat-equation system with pointwise coefficients built from terms.
pub fn custom_galerkin(
    n_modes: usize,
    physical_points: usize,
    drift: &CustomField,
    diffusion: &CustomField,
) -> Result<PresetSystem> {
    let mut s = example2(n_modes, physical_points)?;
    let (op, f, g) = galerkin_reduce(
        n_modes,
        physical_points,
        &drift.pointwise("drift")?,
        &diffusion.pointwise("diffusion")?,
    )?;
    s.name = "custom".into();
    s.op = op;
    s.drift = f;
    s.diffusion = g;
    Ok(s)
}
