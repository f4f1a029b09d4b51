//! SDE coefficient models: drift b, diffusion sigma, and the diffusion
//! matrix a = sigma sigma^T.
//!
//! Built-in families are 1D (affine drift with constant or sine-modulated
//! diffusion); arbitrary coefficients in 1D/2D can be registered as custom
//! callables. Models carry no mutable state, so a model value can be shared
//! freely across threads.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Fills `out` (length d) with b(x).
pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Fills `out` (d x n, row-major) with sigma(x).
pub type DiffusionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelFamily {
    Affine,
    SineDiffusion,
    Custom,
}

/// Time-homogeneous SDE coefficients dY = b(Y) dt + sigma(Y) dB.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    family: ModelFamily,
    params: Vec<f64>,
    drift: DriftFn,
    diffusion: DiffusionFn,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("family", &self.family)
            .field("params", &self.params)
            .finish()
    }
}

impl SdeModel {
    /// 1D affine model: b(x) = c0 + c1 x, sigma(x) = s (constant, nonzero).
    pub fn affine(c0: f64, c1: f64, s: f64) -> Result<Self> {
        if !(c0.is_finite() && c1.is_finite() && s.is_finite()) {
            return Err(Error::InvalidModel("affine parameters must be finite".into()));
        }
        if s == 0.0 {
            return Err(Error::InvalidModel(
                "affine family requires nonzero diffusion s".into(),
            ));
        }
        Ok(Self {
            name: "affine".into(),
            dim: 1,
            noise_dim: 1,
            family: ModelFamily::Affine,
            params: vec![c0, c1, s],
            drift: Arc::new(move |x, out| out[0] = c0 + c1 * x[0]),
            diffusion: Arc::new(move |_x, out| out[0] = s),
        })
    }

    /// 1D model with affine drift and sigma(x) = s0 + s1 sin(x). Requires
    /// |s1| < s0 so the diffusion stays uniformly elliptic.
    pub fn sine_diffusion(c0: f64, c1: f64, s0: f64, s1: f64) -> Result<Self> {
        if ![c0, c1, s0, s1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel(
                "sine-diffusion parameters must be finite".into(),
            ));
        }
        if !(s1.abs() < s0) {
            return Err(Error::InvalidModel(format!(
                "sine-diffusion requires |s1| < s0, got s0 = {s0}, s1 = {s1}"
            )));
        }
        Ok(Self {
            name: "sine-diffusion".into(),
            dim: 1,
            noise_dim: 1,
            family: ModelFamily::SineDiffusion,
            params: vec![c0, c1, s0, s1],
            drift: Arc::new(move |x, out| out[0] = c0 + c1 * x[0]),
            diffusion: Arc::new(move |x, out| out[0] = s0 + s1 * x[0].sin()),
        })
    }

    /// Ornstein-Uhlenbeck model dY = b Y dt + sigma dB (affine with c0 = 0).
    pub fn ornstein_uhlenbeck(b: f64, sigma: f64) -> Result<Self> {
        Self::affine(0.0, b, sigma)
    }

    /// Register arbitrary coefficient callables under a name (library-level
    /// only; the CLI exposes just the built-in families).
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
    ) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidModel(format!("dim must be 1 or 2, got {dim}")));
        }
        if noise_dim == 0 {
            return Err(Error::InvalidModel("noise_dim must be >= 1".into()));
        }
        Ok(Self {
            name: name.into(),
            dim,
            noise_dim,
            family: ModelFamily::Custom,
            params: Vec::new(),
            drift,
            diffusion,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Drift b(x).
    pub fn drift_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        (self.drift)(x, &mut out);
        Ok(out)
    }

    /// Raw diffusion coefficient sigma(x), d x n row-major.
    pub fn sigma_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim * self.noise_dim];
        (self.diffusion)(x, &mut out);
        Ok(out)
    }

    /// Diffusion matrix a(x) = sigma(x) sigma(x)^T.
    pub fn diffusion_matrix_at(&self, x: &[f64]) -> Result<DiffusionMatrix> {
        let sigma = self.sigma_at(x)?;
        Ok(DiffusionMatrix::from_sigma(self.dim, self.noise_dim, &sigma))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Domain(format!(
                "point has dimension {}, model has dimension {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite input point {x:?}")));
        }
        Ok(())
    }
}

/// Symmetric positive semidefinite d x d matrix (d <= 2), stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionMatrix {
    dim: usize,
    m: [f64; 4],
}

impl DiffusionMatrix {
    pub fn from_sigma(dim: usize, noise_dim: usize, sigma: &[f64]) -> Self {
        debug_assert_eq!(sigma.len(), dim * noise_dim);
        let mut m = [0.0; 4];
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = 0.0;
                for k in 0..noise_dim {
                    acc += sigma[i * noise_dim + k] * sigma[j * noise_dim + k];
                }
                m[i * dim + j] = acc;
            }
        }
        Self { dim, m }
    }

    pub fn scalar(a: f64) -> Self {
        Self { dim: 1, m: [a, 0.0, 0.0, 0.0] }
    }

    pub fn from_entries_2d(a11: f64, a12: f64, a22: f64) -> Self {
        Self { dim: 2, m: [a11, a12, a12, a22] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.dim + j]
    }

    /// Scale every entry (covariance of the one-step kernel is tau * a).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.m;
        for v in &mut m {
            *v *= factor;
        }
        Self { dim: self.dim, m }
    }

    pub fn det(&self) -> f64 {
        match self.dim {
            1 => self.m[0],
            _ => self.m[0] * self.m[3] - self.m[1] * self.m[2],
        }
    }

    /// Smallest eigenvalue, closed form for d <= 2.
    pub fn min_eigenvalue(&self) -> f64 {
        match self.dim {
            1 => self.m[0],
            _ => {
                let tr = self.m[0] + self.m[3];
                let disc = (0.25 * (self.m[0] - self.m[3]).powi(2) + self.m[1] * self.m[2])
                    .max(0.0)
                    .sqrt();
                0.5 * tr - disc
            }
        }
    }

    /// Inverse, valid when det > 0.
    pub fn inverse(&self) -> Self {
        match self.dim {
            1 => Self::scalar(1.0 / self.m[0]),
            _ => {
                let d = self.det();
                Self {
                    dim: 2,
                    m: [self.m[3] / d, -self.m[1] / d, -self.m[2] / d, self.m[0] / d],
                }
            }
        }
    }
}

/// Numerical verdict on the coefficient assumptions over a sampled box:
/// bounded first differences (Lipschitz surrogate) and a uniform ellipticity
/// floor. The estimates apply to the sampled region only.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    /// Max sampled central-difference quotient over all entries of b and sigma.
    pub lipschitz_bound_estimate: f64,
    /// Min sampled smallest eigenvalue of a(x).
    pub ellipticity_floor_estimate: f64,
    /// Total lattice points examined.
    pub sample_count: usize,
    pub pass_c1: bool,
    pub pass_c2: bool,
    /// The box the estimates were sampled on.
    pub region: (Vec<f64>, Vec<f64>),
}

/// Sample the box `[lower, upper]` on a lattice with `samples` points per
/// axis and estimate the Lipschitz bound of (b, sigma) by central differences
/// with step = width / (samples - 1), plus the ellipticity floor of a(x).
pub fn check_assumptions(
    model: &SdeModel,
    lower: &[f64],
    upper: &[f64],
    samples: usize,
) -> Result<AssumptionReport> {
    let d = model.dim();
    if lower.len() != d || upper.len() != d {
        return Err(Error::Domain(format!(
            "region dimension ({}, {}) does not match model dimension {d}",
            lower.len(),
            upper.len()
        )));
    }
    if samples < 2 {
        return Err(Error::Precondition("samples must be >= 2 per axis".into()));
    }
    for k in 0..d {
        if !(lower[k] < upper[k]) {
            return Err(Error::Domain(format!(
                "degenerate region on axis {k}: [{}, {}]",
                lower[k], upper[k]
            )));
        }
    }

    let steps: Vec<f64> = (0..d)
        .map(|k| (upper[k] - lower[k]) / (samples - 1) as f64)
        .collect();
    let total = samples.pow(d as u32);

    let mut lip: f64 = 0.0;
    let mut floor = f64::INFINITY;
    let mut x = vec![0.0; d];
    let mut fwd = vec![0.0; d];
    let mut bwd = vec![0.0; d];

    for flat in 0..total {
        let mut rem = flat;
        for k in 0..d {
            let idx = rem % samples;
            rem /= samples;
            x[k] = lower[k] + idx as f64 * steps[k];
        }
        floor = floor.min(model.diffusion_matrix_at(&x)?.min_eigenvalue());

        // Central differences per axis at points with both neighbours inside.
        for k in 0..d {
            if x[k] - steps[k] < lower[k] - 1e-12 * steps[k]
                || x[k] + steps[k] > upper[k] + 1e-12 * steps[k]
            {
                continue;
            }
            fwd.copy_from_slice(&x);
            bwd.copy_from_slice(&x);
            fwd[k] = x[k] + steps[k];
            bwd[k] = x[k] - steps[k];

            let (bf, bb) = (model.drift_at(&fwd)?, model.drift_at(&bwd)?);
            for i in 0..d {
                lip = lip.max(((bf[i] - bb[i]) / (2.0 * steps[k])).abs());
            }
            let (sf, sb) = (model.sigma_at(&fwd)?, model.sigma_at(&bwd)?);
            for (vf, vb) in sf.iter().zip(&sb) {
                lip = lip.max(((vf - vb) / (2.0 * steps[k])).abs());
            }
        }
    }

    Ok(AssumptionReport {
        lipschitz_bound_estimate: lip,
        ellipticity_floor_estimate: floor,
        sample_count: total,
        pass_c1: lip.is_finite(),
        pass_c2: floor > 0.0,
        region: (lower.to_vec(), upper.to_vec()),
    })
}
