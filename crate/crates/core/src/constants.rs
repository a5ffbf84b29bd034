//! Contraction constants, admissibility thresholds and the closed-form
//! bounds on second moments. Every threshold printed anywhere is computed here.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

fn check_operator(n: f64, nu: f64) -> Result<()> {
    if !(n >= 1.0 && n.is_finite()) {
        return Err(invalid(format!("stability constant must be >= 1, got {n}")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(invalid(format!("stability rate must be positive, got {nu}")));
    }
    Ok(())
}

/// Smallness thresholds on the Lipschitz constant `L` (or the growth constant `M`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `L < nu / (N sqrt(2 + nu))`: bounded solution exists, `theta_2 < 1`.
    pub solve: f64,
    /// `L < nu / (2 N sqrt(1 + nu))`: comparability in distribution.
    pub comparability: f64,
    /// `L < nu / (N sqrt(2 (1 + nu)))`.
    pub bs: f64,
    /// `M < nu / (N sqrt(6 (nu + 1)))`: dissipativity bound.
    pub dissipativity: f64,
    /// `L < nu / (N sqrt(3 (nu + 1)))`: global asymptotic stability.
    pub convergence: f64,
}

impl Thresholds {
    pub fn new(n: f64, nu: f64) -> Result<Self> {
        check_operator(n, nu)?;
        Ok(Self {
            solve: nu / (n * (2.0 + nu).sqrt()),
            comparability: nu / (2.0 * n * (1.0 + nu).sqrt()),
            bs: nu / (n * (2.0 * (1.0 + nu)).sqrt()),
            dissipativity: nu / (n * (6.0 * (nu + 1.0)).sqrt()),
            convergence: nu / (n * (3.0 * (nu + 1.0)).sqrt()),
        })
    }
}

/// `theta_2 = N^2 L^2 (2 + nu) / nu^2`, the contraction factor on squared sup-L2 distances.
pub fn theta2(n: f64, nu: f64, l: f64) -> f64 {
    n * n * l * l * (2.0 + nu) / (nu * nu)
}

/// `c_p = [p (p - 1) / 2 (p / (p - 1))^{p - 2}]^{p / 2}`.
pub fn c_p(p: f64) -> f64 {
    (p * (p - 1.0) / 2.0 * (p / (p - 1.0)).powf(p - 2.0)).powf(p / 2.0)
}

/// Contraction factor on sup-`L^p` distances, `p > 2`.
pub fn theta_p(n: f64, nu: f64, l: f64, p: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(invalid(format!("theta_p needs p > 2, got {p}")));
    }
    let bracket = (2.0 * (p - 1.0) / (nu * p)).powf(p - 1.0) + c_p(p) * ((p - 2.0) / (nu * p)).powf(p / 2.0 - 1.0);
    Ok(2f64.powf(p - 1.0) * (n * l).powf(p) * bracket * 2.0 / (nu * p))
}

/// `lim_{p -> 2+} theta_p = 2 N^2 L^2 / nu^2 + 2 N^2 L^2 / nu`.
pub fn theta_p_limit(n: f64, nu: f64, l: f64) -> f64 {
    let k = 2.0 * n * n * l * l;
    k / (nu * nu) + k / nu
}

/// `r = N A0 sqrt(2 + nu) / (nu - N L sqrt(2 + nu))`.
pub fn bounded_ball_radius(n: f64, nu: f64, a0: f64, l: f64) -> Result<f64> {
    check_operator(n, nu)?;
    if !(a0 >= 0.0 && l >= 0.0) {
        return Err(invalid("A0 and L must be nonnegative"));
    }
    let s = (2.0 + nu).sqrt();
    let denom = nu - n * l * s;
    if !(denom > 0.0) {
        return Err(Error::Inadmissible(format!(
            "L = {l} is not below nu / (N sqrt(2 + nu)) = {}",
            nu / (n * s)
        )));
    }
    Ok(n * a0 * s / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub n: f64,
    pub nu: f64,
    pub lipschitz: f64,
    pub p: f64,
    pub theta2: f64,
    pub theta_p: f64,
    pub c_p: f64,
    pub theta_p_limit: f64,
    /// `r / A0`; `None` when `L` is inadmissible.
    pub radius_per_unit_a0: Option<f64>,
    /// Ball radius for the declared `A0`, set by [`ContractionReport::with_a0`].
    pub r: Option<f64>,
    pub a0: Option<f64>,
    pub thresholds: Thresholds,
    pub admissible_41i: bool,
    pub admissible_41ii: bool,
    pub admissible_bs: bool,
}

impl ContractionReport {
    pub fn with_a0(mut self, a0: f64) -> Result<Self> {
        self.r = Some(bounded_ball_radius(self.n, self.nu, a0, self.lipschitz)?);
        self.a0 = Some(a0);
        Ok(self)
    }
}

pub fn contraction_constants(n: f64, nu: f64, l: f64, p: f64) -> Result<ContractionReport> {
    check_operator(n, nu)?;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(invalid(format!("Lipschitz constant must be >= 0, got {l}")));
    }
    let thresholds = Thresholds::new(n, nu)?;
    Ok(ContractionReport {
        n,
        nu,
        lipschitz: l,
        p,
        theta2: theta2(n, nu, l),
        theta_p: theta_p(n, nu, l, p)?,
        c_p: c_p(p),
        theta_p_limit: theta_p_limit(n, nu, l),
        radius_per_unit_a0: bounded_ball_radius(n, nu, 1.0, l).ok(),
        r: None,
        a0: None,
        thresholds,
        admissible_41i: l < thresholds.solve,
        admissible_41ii: l < thresholds.comparability,
        admissible_bs: l < thresholds.bs,
    })
}

/// Right-hand side of the dissipativity bound at elapsed time `dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipativityBound {
    pub prefactor: f64,
    pub rate: f64,
    pub asymptote: f64,
    pub initial_second_moment: f64,
}

impl DissipativityBound {
    pub fn new(n: f64, nu: f64, a0: f64, m: f64, initial_second_moment: f64) -> Result<Self> {
        let th = Thresholds::new(n, nu)?;
        if !(m >= 0.0 && m < th.dissipativity) {
            return Err(Error::Inadmissible(format!(
                "M = {m} is not below nu / (N sqrt(6 (nu + 1))) = {}",
                th.dissipativity
            )));
        }
        let denom = nu * nu - 6.0 * n * n * m * m * (nu + 1.0);
        let rest = 2.0 * a0 * a0 * (nu + 1.0) / denom;
        Ok(Self {
            prefactor: 3.0 * n * n * (initial_second_moment - rest),
            rate: nu - 6.0 * n * n * m * m * (1.0 + 1.0 / nu),
            asymptote: 6.0 * n * n * a0 * a0 * (nu + 1.0) / denom,
            initial_second_moment,
        })
    }

    pub fn at(&self, dt: f64) -> f64 {
        self.prefactor * (-self.rate * dt).exp() + self.asymptote
    }
}

/// `3 N^2 exp(-rate (t - t0)) E|x1 - x2|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBound {
    pub prefactor: f64,
    pub rate: f64,
    pub initial_difference: f64,
}

impl ConvergenceBound {
    pub fn new(n: f64, nu: f64, l: f64, initial_difference: f64) -> Result<Self> {
        let th = Thresholds::new(n, nu)?;
        if !(l >= 0.0 && l < th.convergence) {
            return Err(Error::Inadmissible(format!(
                "L = {l} is not below nu / (N sqrt(3 (nu + 1))) = {}",
                th.convergence
            )));
        }
        Ok(Self {
            prefactor: 3.0 * n * n,
            rate: nu - 3.0 * (1.0 + 1.0 / nu) * n * n * l * l,
            initial_difference,
        })
    }

    pub fn at(&self, dt: f64) -> f64 {
        self.prefactor * (-self.rate * dt).exp() * self.initial_difference
    }
}
