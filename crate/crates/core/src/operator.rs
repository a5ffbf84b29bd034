//! Diagonal exponentially stable generators and their exact one-step kernels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `A` acting as `-lambda_k` on mode `k`, with `|U(t)| <= N e^{-nu t}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOperator {
    mode_rates: Vec<f64>,
    stability_constant: f64,
    stability_rate: f64,
}

impl SpectralOperator {
    pub fn new(mode_rates: Vec<f64>, stability_constant: f64, stability_rate: f64) -> Result<Self> {
        if mode_rates.is_empty() {
            return Err(invalid("operator needs at least one mode"));
        }
        if mode_rates.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("mode rates must be positive and finite"));
        }
        if !(stability_constant >= 1.0) {
            return Err(invalid(format!(
                "stability constant must be >= 1, got {stability_constant}"
            )));
        }
        let min_rate = mode_rates.iter().copied().fold(f64::INFINITY, f64::min);
        if !(stability_rate > 0.0 && stability_rate <= min_rate * (1.0 + 1e-12)) {
            return Err(invalid(format!(
                "stability rate {stability_rate} must lie in (0, min rate {min_rate}]"
            )));
        }
        Ok(Self {
            mode_rates,
            stability_constant,
            stability_rate,
        })
    }

    /// `A = -nu` on the real line.
    pub fn scalar(nu: f64) -> Result<Self> {
        Self::new(vec![nu], 1.0, nu)
    }

    /// Dirichlet Laplacian on `[0, 1]` truncated to `n_modes` sine modes: `lambda_n = n^2 pi^2`.
    pub fn dirichlet_laplacian(n_modes: usize) -> Result<Self> {
        let rates = (1..=n_modes).map(|n| (n as f64 * PI).powi(2)).collect();
        Self::new(rates, 1.0, PI * PI)
    }

    pub fn dim(&self) -> usize {
        self.mode_rates.len()
    }

    pub fn mode_rates(&self) -> &[f64] {
        &self.mode_rates
    }

    /// `N` in `|U(t)| <= N e^{-nu t}`.
    pub fn stability_constant(&self) -> f64 {
        self.stability_constant
    }

    /// `nu` in `|U(t)| <= N e^{-nu t}`.
    pub fn stability_rate(&self) -> f64 {
        self.stability_rate
    }

    /// Smallest burn-in with `N e^{-nu b} <= rel`.
    pub fn burn_in_for(&self, rel: f64) -> f64 {
        (self.stability_constant / rel).ln().max(0.0) / self.stability_rate
    }

    pub fn step_kernel(&self, h: f64) -> StepKernel {
        StepKernel::new(&self.mode_rates, h)
    }
}

/// Per-step coefficients of the exponential integrator on a fixed step `h`.
///
/// For mode `k` with rate `lambda` and `a = lambda h`:
/// * `decay = e^{-a}`
/// * `left`, `right`: exact weights of `int_0^h e^{-lambda (h - s)} f(s) ds`
///   for `f` linear between its endpoint values
/// * `frozen = (1 - e^{-a}) / lambda`, the weight for `f` held at the left endpoint
///
/// The noise factor is the lower Cholesky factor of the joint covariance of
/// `(dW, I_1, ..., I_K)` with `I_k = int_0^h e^{-lambda_k (h - s)} dW(s)`.
#[derive(Clone, Debug)]
pub struct StepKernel {
    pub h: f64,
    pub decay: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub frozen: Vec<f64>,
    chol: Vec<f64>,
    channels: usize,
}

/// Taylor series of `(1 - e^{-a} - a e^{-a}) / a^2` and `(a - 1 + e^{-a}) / a^2`.
fn trapezoid_series(a: f64) -> (f64, f64) {
    let (mut wl, mut wr) = (0.0, 0.0);
    // term = (-a)^k / (k + 2)!
    let mut term = 0.5;
    for k in 0..30 {
        wl += (k + 1) as f64 * term;
        wr += term;
        term *= -a / (k + 3) as f64;
    }
    (wl, wr)
}

impl StepKernel {
    fn new(rates: &[f64], h: f64) -> Self {
        let k = rates.len();
        let mut decay = Vec::with_capacity(k);
        let mut left = Vec::with_capacity(k);
        let mut right = Vec::with_capacity(k);
        let mut frozen = Vec::with_capacity(k);
        for &lambda in rates {
            let a = lambda * h;
            let e = (-a).exp();
            decay.push(e);
            frozen.push(-(-a).exp_m1() / lambda);
            let (wl, wr) = if a < 1.0 {
                trapezoid_series(a)
            } else {
                ((1.0 - e - a * e) / (a * a), (a - 1.0 + e) / (a * a))
            };
            left.push(h * wl);
            right.push(h * wr);
        }

        let channels = k + 1;
        let mut cov = vec![0.0; channels * channels];
        let var_conv = |l1: f64, l2: f64| {
            let s = (l1 + l2) * h;
            if s < 1e-8 {
                h * (1.0 - 0.5 * s)
            } else {
                -(-s).exp_m1() / (l1 + l2)
            }
        };
        cov[0] = h;
        for i in 0..k {
            let c = -(-rates[i] * h).exp_m1() / rates[i];
            cov[(i + 1) * channels] = c;
            cov[i + 1] = c;
            for j in 0..k {
                cov[(i + 1) * channels + j + 1] = var_conv(rates[i], rates[j]);
            }
        }
        let chol = semidefinite_cholesky(&cov, channels);
        Self {
            h,
            decay,
            left,
            right,
            frozen,
            chol,
            channels,
        }
    }

    /// Number of standard normals consumed per step.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Maps standard normals `z` to `(dW, I_1..I_K)`; writes `I` into `conv` and returns `dW`.
    #[inline]
    pub fn correlate(&self, z: &[f64], conv: &mut [f64]) -> f64 {
        let c = self.channels;
        for (i, out) in conv.iter_mut().enumerate() {
            let row = &self.chol[(i + 1) * c..(i + 2) * c];
            *out = row[..i + 2].iter().zip(z).map(|(l, z)| l * z).sum();
        }
        self.chol[0] * z[0]
    }

    /// Exponential step with the drift linear across the step and the diffusion frozen at the left end.
    #[inline]
    pub fn advance_linear(&self, x: &mut [f64], f_left: &[f64], f_right: &[f64], g_left: &[f64], conv: &[f64]) {
        for k in 0..x.len() {
            x[k] = self.decay[k] * x[k] + self.left[k] * f_left[k] + self.right[k] * f_right[k] + g_left[k] * conv[k];
        }
    }

    /// Exponential step with drift and diffusion frozen at the left end.
    #[inline]
    pub fn advance_frozen(&self, x: &mut [f64], f_left: &[f64], g_left: &[f64], conv: &[f64]) {
        for k in 0..x.len() {
            x[k] = self.decay[k] * x[k] + self.frozen[k] * f_left[k] + g_left[k] * conv[k];
        }
    }

    #[cfg(test)]
    fn factor(&self) -> &[f64] {
        &self.chol
    }
}

/// Lower Cholesky factor of a positive semidefinite matrix; pivots that
/// vanish to rounding are set to zero together with their column.
fn semidefinite_cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 1e-13 * a[j * n + j] {
            continue;
        }
        let pivot = d.sqrt();
        l[j * n + j] = pivot;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / pivot;
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(SpectralOperator::new(vec![], 1.0, 1.0).is_err());
        assert!(SpectralOperator::new(vec![1.0], 0.5, 1.0).is_err());
        assert!(SpectralOperator::new(vec![1.0, 2.0], 1.0, 1.5).is_err());
        assert!(SpectralOperator::new(vec![-1.0], 1.0, 1.0).is_err());
        let op = SpectralOperator::dirichlet_laplacian(4).unwrap();
        assert!((op.stability_rate() - PI * PI).abs() < 1e-14);
        assert!((op.mode_rates()[3] - 16.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn weights_integrate_constants_and_ramps_exactly() {
        for &(lambda, h) in &[(5.0, 1e-3), (2500.0, 1e-3), (0.01, 0.5), (5.0, 1e-6)] {
            let k = SpectralOperator::scalar(lambda).unwrap().step_kernel(h);
            let a = lambda * h;
            // int_0^h e^{-lambda (h-s)} ds
            let ones = -(-a).exp_m1() / lambda;
            assert!((k.left[0] + k.right[0] - ones).abs() <= 1e-14 * ones.max(1e-300) + 1e-18);
            assert!((k.frozen[0] - ones).abs() <= 1e-14 * ones);
            // int_0^h e^{-lambda (h-s)} s/h ds by Simpson on a fine mesh
            let m = 2000;
            let f = |s: f64| (-lambda * (h - s)).exp() * s / h;
            let dx = h / m as f64;
            let simpson: f64 = (0..m)
                .map(|i| {
                    let x0 = i as f64 * dx;
                    dx / 6.0 * (f(x0) + 4.0 * f(x0 + 0.5 * dx) + f(x0 + dx))
                })
                .sum();
            assert!((k.right[0] - simpson).abs() < 1e-9 * simpson.max(1e-12), "{lambda} {h}");
        }
    }

    #[test]
    fn noise_factor_reproduces_covariance() {
        let op = SpectralOperator::dirichlet_laplacian(6).unwrap();
        let h = 1e-3;
        let k = op.step_kernel(h);
        let c = k.channels();
        let l = k.factor();
        let rates = op.mode_rates();
        let cov = |i: usize, j: usize| -> f64 {
            match (i, j) {
                (0, 0) => h,
                (0, j) | (j, 0) => -(-rates[j - 1] * h).exp_m1() / rates[j - 1],
                (i, j) => {
                    let s = rates[i - 1] + rates[j - 1];
                    -(-s * h).exp_m1() / s
                }
            }
        };
        for i in 0..c {
            for j in 0..c {
                let llt: f64 = (0..c).map(|m| l[i * c + m] * l[j * c + m]).sum();
                assert!((llt - cov(i, j)).abs() < 1e-11 * h, "{i},{j} {llt} {}", cov(i, j));
            }
        }
    }

    #[test]
    fn scalar_convolution_variance() {
        let k = SpectralOperator::scalar(5.0).unwrap().step_kernel(0.01);
        let mut conv = [0.0];
        // with z = (0, 1) and z = (1, 0) the squared images sum to the variance
        k.correlate(&[1.0, 0.0], &mut conv);
        let a = conv[0];
        k.correlate(&[0.0, 1.0], &mut conv);
        let b = conv[0];
        let expected = -(-0.1f64).exp_m1() / 10.0;
        assert!((a * a + b * b - expected).abs() < 1e-15);
    }
}
