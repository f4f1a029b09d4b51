//! One-step Euler-Maruyama transition kernel and the Ornstein-Uhlenbeck
//! analytic objects used as references.
//!
//! The one-step kernel started at x with step tau is the Gaussian with mean
//! x + b(x) tau and covariance tau a(x). Its characteristic function in the
//! target variable is exp(i xi . mean - xi^T cov xi / 2).
//!
//! For the OU process dY = bY dt + sigma dB the exact law at time t started
//! at x is N(x e^{bt}, (sigma^2 / 2b)(e^{2bt} - 1)), and the n-step law of
//! the Euler-Maruyama chain has the closed form built from
//! alpha_n = (1 + b tau)^n and beta_n^2 = (sigma^2 / b) * 2((1 + b tau)^{2n} - 1) / (2 + b tau).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid_density::InitialDensitySpec;
use crate::model::{DiffusionMatrix, SdeModel};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Threshold below which |b| t is treated as zero and the OU variance
/// formulas switch to their b -> 0 limits.
const DRIFT_LIMIT_EPS: f64 = 1e-8;

/// Gaussian parameters of one Euler-Maruyama step from a source point.
///
/// The inverse covariance and normalization are factored once at
/// construction since evaluation sits in the propagation inner loop.
#[derive(Clone, Debug)]
pub struct KernelParams {
    mean: Vec<f64>,
    covariance: DiffusionMatrix,
    inv_covariance: DiffusionMatrix,
    norm_const: f64,
    tau: f64,
    source: Vec<f64>,
}

impl KernelParams {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DiffusionMatrix {
        &self.covariance
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    /// Multivariate normal density at y (this is the kernel value
    /// k(y, source, tau)).
    pub fn density(&self, y: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.mean.len());
        let quad = match self.mean.len() {
            1 => {
                let dy = y[0] - self.mean[0];
                dy * dy * self.inv_covariance.entry(0, 0)
            }
            _ => {
                let dx = y[0] - self.mean[0];
                let dy = y[1] - self.mean[1];
                dx * dx * self.inv_covariance.entry(0, 0)
                    + 2.0 * dx * dy * self.inv_covariance.entry(0, 1)
                    + dy * dy * self.inv_covariance.entry(1, 1)
            }
        };
        self.norm_const * (-0.5 * quad).exp()
    }
}

/// Kernel parameters of one EM step: mean x + b(x) tau, covariance tau a(x).
pub fn em_kernel_params(model: &SdeModel, x: &[f64], tau: f64) -> Result<KernelParams> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("time step must be positive, got {tau}")));
    }
    let b = model.drift_at(x)?;
    let a = model.diffusion_matrix_at(x)?;
    let min_eig = a.min_eigenvalue();
    if min_eig <= 0.0 {
        return Err(Error::Ellipticity { x: x.to_vec(), min_eig });
    }
    let covariance = a.scaled(tau);
    let det = covariance.det();
    let d = model.dim();
    let norm_const = 1.0 / (TWO_PI.powi(d as i32) * det).sqrt();
    let mean = x.iter().zip(&b).map(|(xi, bi)| xi + bi * tau).collect();
    Ok(KernelParams {
        mean,
        inv_covariance: covariance.inverse(),
        covariance,
        norm_const,
        tau,
        source: x.to_vec(),
    })
}

/// Characteristic function of the one-step kernel in the target variable:
/// exp(i xi . (x + b(x) tau) - xi^T (tau a(x)) xi / 2).
pub fn em_kernel_charfn(
    model: &SdeModel,
    x: &[f64],
    tau: f64,
    xi: &[f64],
) -> Result<Complex64> {
    let p = em_kernel_params(model, x, tau)?;
    if xi.len() != p.mean.len() {
        return Err(Error::Domain("frequency dimension mismatch".into()));
    }
    let phase: f64 = xi.iter().zip(&p.mean).map(|(f, m)| f * m).sum();
    let mut quad = 0.0;
    for (i, fi) in xi.iter().enumerate() {
        for (j, fj) in xi.iter().enumerate() {
            quad += fi * fj * p.covariance.entry(i, j);
        }
    }
    Ok(Complex64::new(0.0, phase).exp() * (-0.5 * quad).exp())
}

fn gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = (x - mean) / variance.sqrt();
    (-0.5 * z * z).exp() / (TWO_PI * variance).sqrt()
}

/// Exact OU transition law: mean factor e^{bt} and variance
/// (sigma^2 / 2b)(e^{2bt} - 1), with the limit sigma^2 t as b -> 0.
#[derive(Clone, Copy, Debug)]
pub struct OuExact {
    pub b: f64,
    pub sigma: f64,
    pub t: f64,
    pub mean_factor: f64,
    pub variance: f64,
}

impl OuExact {
    pub fn new(b: f64, sigma: f64, t: f64) -> Result<Self> {
        if !(t > 0.0) || sigma == 0.0 || !b.is_finite() || !sigma.is_finite() || !t.is_finite() {
            return Err(Error::Domain(format!(
                "OU exact kernel requires t > 0 and sigma != 0, got b = {b}, sigma = {sigma}, t = {t}"
            )));
        }
        let variance = if (b * t).abs() < DRIFT_LIMIT_EPS {
            sigma * sigma * t
        } else {
            sigma * sigma / (2.0 * b) * (2.0 * b * t).exp_m1()
        };
        Ok(Self { b, sigma, t, mean_factor: (b * t).exp(), variance })
    }

    /// Transition density k(y, x, t).
    pub fn density(&self, x: f64, y: f64) -> f64 {
        gaussian_pdf(y, x * self.mean_factor, self.variance)
    }

    /// Law of Y_t when Y_0 ~ N(mean0, var0): mean and variance of the
    /// Gaussian pushforward.
    pub fn pushforward_gaussian(&self, mean0: f64, var0: f64) -> (f64, f64) {
        (
            mean0 * self.mean_factor,
            self.mean_factor * self.mean_factor * var0 + self.variance,
        )
    }
}

/// Exact OU transition density, free-function form.
pub fn ou_exact_kernel(b: f64, sigma: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    Ok(OuExact::new(b, sigma, t)?.density(x, y))
}

/// Closed-form parameters of the n-step Euler-Maruyama chain for OU.
#[derive(Clone, Copy, Debug)]
pub struct OuIterated {
    pub alpha_n: f64,
    pub beta_n_sq: f64,
    pub steps: u32,
    pub tau: f64,
}

impl OuIterated {
    /// n-step transition density started at the point x: the Gaussian with
    /// mean alpha_n x and variance beta_n^2 / 2.
    pub fn kernel_density(&self, x: f64, y: f64) -> f64 {
        gaussian_pdf(y, self.alpha_n * x, 0.5 * self.beta_n_sq)
    }

    /// Law of X_n when X_0 ~ N(mean0, var0): Gaussian convolution in closed
    /// form, mean alpha_n mean0 and variance alpha_n^2 var0 + beta_n^2 / 2.
    pub fn pushforward_gaussian(&self, mean0: f64, var0: f64) -> (f64, f64) {
        (
            self.alpha_n * mean0,
            self.alpha_n * self.alpha_n * var0 + 0.5 * self.beta_n_sq,
        )
    }
}

/// alpha_n = (1 + b tau)^n and beta_n^2 for tau = t / n. Requires n > |b| t,
/// which keeps 1 + b tau positive; the b -> 0 limit is beta_n^2 = 2 sigma^2 t.
pub fn ou_iterated_params(b: f64, sigma: f64, t: f64, n: u32) -> Result<OuIterated> {
    if !(t > 0.0) || n == 0 {
        return Err(Error::Domain(format!("need t > 0 and n >= 1, got t = {t}, n = {n}")));
    }
    if (n as f64) <= (b * t).abs() {
        return Err(Error::Precondition(format!(
            "iterated OU closed form requires n > |b| t (n = {n}, |b| t = {})",
            (b * t).abs()
        )));
    }
    let tau = t / n as f64;
    // ln_1p/exp_m1 keep full precision when b tau is small; the precondition
    // guarantees 1 + b tau > 0.
    let alpha_n = ((n as f64) * (tau * b).ln_1p()).exp();
    let beta_n_sq = if (b * tau).abs() < DRIFT_LIMIT_EPS {
        2.0 * sigma * sigma * t
    } else {
        sigma * sigma / b * 2.0 * (2.0 * n as f64 * (b * tau).ln_1p()).exp_m1() / (2.0 + b * tau)
    };
    Ok(OuIterated { alpha_n, beta_n_sq, steps: n, tau })
}

/// Density at y of the n-step EM chain when X_0 follows the given initial
/// density. Only Gaussian initial data admits the closed form; anything else
/// must go through grid propagation.
pub fn ou_iterated_density(p: &OuIterated, u0: &InitialDensitySpec, y: f64) -> Result<f64> {
    match u0 {
        InitialDensitySpec::Gaussian { mean, variance } => {
            let (m, v) = p.pushforward_gaussian(*mean, *variance);
            Ok(gaussian_pdf(y, m, v))
        }
        other => Err(Error::Unsupported(format!(
            "closed-form iterated density needs Gaussian initial data, got {other:?}; use grid propagation"
        ))),
    }
}
