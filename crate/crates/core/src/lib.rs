//! Simulation and verification tools for semilinear SDEs
//! `dx = (A x + F(t, x)) dt + G(t, x) dW` with an exponentially stable,
//! diagonal `A`.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod coefficients;
pub mod constants;
pub mod ensemble;
pub mod error;
pub mod fixedpoint;
pub mod galerkin;
pub mod green;
pub mod grid;
pub mod law;
pub mod operator;
pub mod path;
pub mod presets;
pub mod recurrence;
pub mod reference;
pub mod rng;
pub mod scenario;
pub mod stability;

pub use coefficients::{AuditConfig, CoefficientField, FieldConstants};
pub use error::{Error, Result};
pub use grid::UniformGrid;
pub use operator::SpectralOperator;
pub use path::{SampledPath, Signal};
