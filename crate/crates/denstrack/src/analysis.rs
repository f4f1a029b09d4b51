//! Convergence and rate studies, the Monte Carlo Euler-Maruyama oracle, and
//! the weak-convergence-versus-L1 demonstration.
//!
//! Studies measure L1 errors of the n-step grid evolution against either the
//! exact Ornstein-Uhlenbeck pushforward (Gaussian initial data analytically,
//! anything else through an exact-kernel redistribution at grid resolution)
//! or a fine-time self reference with n_ref = 8 max(n_list); the latter only
//! measures time-discretization error. Rates come from ordinary least
//! squares of log(error) against log(1/n), excluding rows that have sunk
//! into the spatial floor (estimated by re-running the largest n at half the
//! spatial resolution).

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_density::{init_density, GridDensity, GridSpec, InitialDensitySpec};
use crate::kernel::OuExact;
use crate::model::{ModelFamily, SdeModel};
use crate::propagator::{evolve, gaussian_redistribute, StepMode};
use crate::rng::CounterRng;
use crate::special::normal_inv_cdf;

/// Reference solution for a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    /// Exact OU pushforward; needs a pure OU model (affine, c0 = 0) and
    /// Gaussian or Cauchy initial data.
    OuExact,
    /// Same grid, n_ref = 8 max(n_list) time steps.
    FineGridSelf,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvergenceRow {
    pub n: u32,
    pub error: f64,
    pub seconds: f64,
    /// Leaked mass of the evolved density for this row (diagnostic only).
    #[serde(rename = "leaked_mass")]
    pub leaked: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Slope of log(error) against log(1/n), when enough rows sit above the
    /// spatial floor.
    pub fitted_rate: Option<f64>,
    pub fit_r2: Option<f64>,
    /// Estimated spatial error floor (largest n re-run at half resolution).
    pub grid_floor: f64,
}

/// Ordinary least squares of log(error) on log(1/n). Zero errors are
/// excluded; needs at least 3 usable rows. Returns (slope, r^2).
pub fn fit_rate(rows: &[(u32, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(n, e)| (-(*n as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ybar).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some((slope, r2))
}

fn is_pure_ou(model: &SdeModel) -> Option<(f64, f64)> {
    if model.family() == ModelFamily::Affine && model.params()[0] == 0.0 {
        Some((model.params()[1], model.params()[2]))
    } else {
        None
    }
}

/// Exact OU pushforward of an arbitrary grid density: one redistribution
/// through the exact transition kernel N(x e^{bt}, (sigma^2/2b)(e^{2bt}-1)).
/// Cell masses in, cell-averaged exact law out.
pub fn ou_exact_pushforward_grid(
    b: f64,
    sigma: f64,
    t: f64,
    u0: &GridDensity,
) -> Result<GridDensity> {
    if u0.spec().dim() != 1 {
        return Err(Error::Unsupported("exact OU pushforward is 1D".into()));
    }
    let exact = OuExact::new(b, sigma, t)?;
    let spec = u0.spec();
    let n = spec.cells()[0];
    let sd = exact.variance.sqrt();
    let mu: Vec<f64> = (0..n).map(|i| spec.center(0, i) * exact.mean_factor).collect();
    let sds = vec![sd; n];
    let (out_mass, leak, _trunc) = gaussian_redistribute(spec, u0.values(), &mu, &sds);
    let h = spec.spacing(0);
    let values: Vec<f64> = out_mass.iter().map(|m| m / h).collect();
    Ok(GridDensity::new_unchecked(
        spec.clone(),
        values,
        (u0.leaked_mass() + leak).min(1.0),
    ))
}

#[allow(clippy::too_many_arguments)]
fn reference_density(
    model: &SdeModel,
    u0_spec: &InitialDensitySpec,
    u0: &GridDensity,
    grid: &GridSpec,
    t: f64,
    n_list: &[u32],
    reference: Reference,
    mode: StepMode,
) -> Result<GridDensity> {
    match reference {
        Reference::OuExact => {
            let (b, sigma) = is_pure_ou(model).ok_or_else(|| {
                Error::Config(
                    "OuExact reference needs a pure OU model (affine family with c0 = 0)".into(),
                )
            })?;
            match u0_spec {
                InitialDensitySpec::Gaussian { mean, variance } => {
                    let exact = OuExact::new(b, sigma, t)?;
                    let (m, v) = exact.pushforward_gaussian(*mean, *variance);
                    init_density(&InitialDensitySpec::Gaussian { mean: m, variance: v }, grid)
                }
                InitialDensitySpec::Cauchy { .. } => ou_exact_pushforward_grid(b, sigma, t, u0),
                other => Err(Error::Config(format!(
                    "OuExact reference supports Gaussian or Cauchy initial data, got {other:?}"
                ))),
            }
        }
        Reference::FineGridSelf => {
            let n_ref = 8 * n_list.iter().copied().max().unwrap_or(1);
            Ok(evolve(u0, model, t, n_ref, mode, 0)?.final_density)
        }
    }
}

/// Run the n-step evolution for every n in `n_list` and record L1 errors
/// against the chosen reference, wall time, and a fitted convergence rate.
pub fn convergence_study(
    model: &SdeModel,
    u0_spec: &InitialDensitySpec,
    grid: &GridSpec,
    t: f64,
    n_list: &[u32],
    reference: Reference,
) -> Result<ConvergenceTable> {
    if n_list.is_empty() {
        return Err(Error::Config("n_list must be nonempty".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mode = if grid.dim() == 1 {
        StepMode::CdfRedistribution
    } else {
        StepMode::MidpointQuadrature
    };

    let u0 = init_density(u0_spec, grid)?;
    let reference_u = reference_density(model, u0_spec, &u0, grid, t, &ns, reference, mode)?;

    let mut rows = Vec::with_capacity(ns.len());
    for &n in &ns {
        let start = Instant::now();
        let res = evolve(&u0, model, t, n, mode, 0)?;
        let seconds = start.elapsed().as_secs_f64();
        rows.push(ConvergenceRow {
            n,
            error: res.final_density.l1_distance(&reference_u)?,
            seconds,
            leaked: res.final_density.leaked_mass(),
        });
    }

    // Spatial floor: largest n at half resolution; time error cancels in the
    // difference, what remains is the grid contribution. With second-order
    // spatial error the half-resolution run carries 4x the fine floor, so
    // the difference is 3x the fine-grid floor.
    let n_max = *ns.last().unwrap();
    let coarse_cells: Vec<usize> = grid.cells().iter().map(|c| (c / 2).max(8)).collect();
    let coarse = GridSpec::new(grid.lower().to_vec(), grid.upper().to_vec(), coarse_cells)?;
    let coarse_u0 = init_density(u0_spec, &coarse)?;
    let coarse_ref =
        reference_density(model, u0_spec, &coarse_u0, &coarse, t, &ns, reference, mode)?;
    let coarse_err = evolve(&coarse_u0, model, t, n_max, mode, 0)?
        .final_density
        .l1_distance(&coarse_ref)?;
    let fine_err = rows.last().unwrap().error;
    let grid_floor = (coarse_err - fine_err).abs() / 3.0;

    let usable: Vec<(u32, f64)> = rows
        .iter()
        .filter(|r| r.error > 10.0 * grid_floor)
        .map(|r| (r.n, r.error))
        .collect();
    let fit = if usable.len() >= 3 { fit_rate(&usable) } else { None };

    Ok(ConvergenceTable {
        rows,
        fitted_rate: fit.map(|f| f.0),
        fit_r2: fit.map(|f| f.1),
        grid_floor,
    })
}

/// Monte Carlo configuration. `paths` below 1e4 is rejected: the histogram
/// noise would dominate every comparison the oracle is used for.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct McConfig {
    pub paths: u64,
    pub steps: u32,
    pub seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 10_000 {
            return Err(Error::Precondition(format!(
                "Monte Carlo needs at least 1e4 paths, got {}",
                self.paths
            )));
        }
        if self.steps == 0 {
            return Err(Error::Precondition("Monte Carlo needs steps >= 1".into()));
        }
        Ok(())
    }
}

fn sample_initial(spec: &InitialDensitySpec, rng: &mut CounterRng) -> Result<f64> {
    match spec {
        InitialDensitySpec::Gaussian { mean, variance } => {
            // inverse-CDF transform of one uniform
            Ok(mean + variance.sqrt() * normal_inv_cdf(rng.uniform().max(f64::MIN_POSITIVE)))
        }
        InitialDensitySpec::Cauchy { location, scale } => Ok(location + scale * rng.cauchy()),
        InitialDensitySpec::Uniform { a, b } => Ok(a + (b - a) * rng.uniform()),
        other => Err(Error::Unsupported(format!(
            "no sampler for initial density {other:?}"
        ))),
    }
}

/// Histogram density of the Euler-Maruyama chain at time t.
///
/// Path i draws from the stream keyed by (seed, i), so the histogram is
/// bit-identical for a fixed config regardless of parallelism. Terminal
/// values outside the box count as leakage.
pub fn mc_density(
    model: &SdeModel,
    u0_spec: &InitialDensitySpec,
    t: f64,
    cfg: &McConfig,
    grid: &GridSpec,
) -> Result<GridDensity> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("final time must be positive, got {t}")));
    }
    if model.dim() != grid.dim() {
        return Err(Error::GridMismatch("model and grid dimensions differ".into()));
    }
    u0_spec.validate()?;
    // fail early if this initial density has no sampler
    sample_initial(u0_spec, &mut CounterRng::keyed(cfg.seed, u64::MAX))?;

    let d = model.dim();
    let noise_dim = model.noise_dim();
    let tau = t / cfg.steps as f64;
    let sqrt_tau = tau.sqrt();
    let total_cells = grid.cell_count();

    const MC_CHUNK: u64 = 8192;
    let n_chunks = cfg.paths.div_ceil(MC_CHUNK);
    let partials: Vec<(Vec<u64>, u64)> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut counts = vec![0u64; total_cells];
            let mut leaked = 0u64;
            let lo = ci * MC_CHUNK;
            let hi = ((ci + 1) * MC_CHUNK).min(cfg.paths);
            let mut x = vec![0.0; d];
            let mut b = vec![0.0; d];
            let mut sigma = vec![0.0; d * noise_dim];
            let mut noise = vec![0.0; noise_dim];
            for path in lo..hi {
                let mut rng = CounterRng::keyed(cfg.seed, path);
                for xi in x.iter_mut() {
                    *xi = sample_initial(u0_spec, &mut rng).expect("sampler checked above");
                }
                for _ in 0..cfg.steps {
                    (0..noise_dim).for_each(|k| noise[k] = rng.normal());
                    // a path that left the finite range stays broken and is
                    // counted as leakage at binning time
                    let (Ok(bv), Ok(sv)) = (model.drift_at(&x), model.sigma_at(&x)) else {
                        break;
                    };
                    b.copy_from_slice(&bv);
                    sigma.copy_from_slice(&sv);
                    for i in 0..d {
                        let mut diff = 0.0;
                        for k in 0..noise_dim {
                            diff += sigma[i * noise_dim + k] * noise[k];
                        }
                        x[i] += b[i] * tau + sqrt_tau * diff;
                    }
                }
                // bin the terminal point
                let mut flat = 0usize;
                let mut inside = true;
                for axis in 0..d {
                    let rel = (x[axis] - grid.lower()[axis]) / grid.spacing(axis);
                    if !(0.0..(grid.cells()[axis] as f64)).contains(&rel) || rel.is_nan() {
                        inside = false;
                        break;
                    }
                    let idx = rel as usize;
                    flat = if axis == 0 { idx } else { flat * grid.cells()[axis] + idx };
                }
                if inside {
                    counts[flat] += 1;
                } else {
                    leaked += 1;
                }
            }
            (counts, leaked)
        })
        .collect();

    let mut counts = vec![0u64; total_cells];
    let mut leaked = 0u64;
    for (c, l) in &partials {
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
        leaked += l;
    }

    let norm = 1.0 / (cfg.paths as f64 * grid.cell_volume());
    let values: Vec<f64> = counts.iter().map(|&c| c as f64 * norm).collect();
    Ok(GridDensity::new_unchecked(
        grid.clone(),
        values,
        leaked as f64 / cfg.paths as f64,
    ))
}

/// Outcome of the weak-vs-L1 comparison between the sine-perturbed uniform
/// density and the uniform density it converges to weakly.
#[derive(Clone, Debug, Serialize)]
pub struct WeakGapReport {
    pub n: u32,
    /// L1 distance; stays at 2/pi for every n.
    pub l1_gap: f64,
    /// |phi_n(xi) - phi_uniform(xi)| at xi = 1, 2 pi, 4 pi; these shrink
    /// with n (Riemann-Lebesgue), which is exactly why weak convergence does
    /// not imply L1 convergence.
    pub charfn_gaps: Vec<(f64, f64)>,
}

/// Frequencies probed by the weak-gap demonstration.
pub const WEAK_GAP_FREQUENCIES: [f64; 3] =
    [1.0, 2.0 * std::f64::consts::PI, 4.0 * std::f64::consts::PI];

/// Compare the oscillatory density 1 + sin(2 n pi x) on [0, 1] with the
/// uniform density, in L1 and through characteristic functions.
pub fn weak_gap_demo(n: u32, grid: &GridSpec) -> Result<WeakGapReport> {
    if grid.dim() != 1 {
        return Err(Error::Unsupported("weak-gap demo is 1D".into()));
    }
    if grid.lower()[0] > 0.0 || grid.upper()[0] < 1.0 {
        return Err(Error::Resolution("grid box must contain [0, 1]".into()));
    }
    let cells_per_unit = 1.0 / grid.spacing(0);
    if cells_per_unit + 1e-9 < 512.0 * n as f64 {
        return Err(Error::Resolution(format!(
            "grid must resolve the oscillation: need >= {} cells per unit length, have {:.1}",
            512 * n,
            cells_per_unit
        )));
    }
    let v = init_density(&InitialDensitySpec::SinePerturbedUniform { n }, grid)?;
    let u = init_density(&InitialDensitySpec::Uniform { a: 0.0, b: 1.0 }, grid)?;
    let l1_gap = v.l1_distance(&u)?;
    let mut charfn_gaps = Vec::with_capacity(WEAK_GAP_FREQUENCIES.len());
    for xi in WEAK_GAP_FREQUENCIES {
        let gap = (v.characteristic_function(&[xi])? - u.characteristic_function(&[xi])?).norm();
        charfn_gaps.push((xi, gap));
    }
    Ok(WeakGapReport { n, l1_gap, charfn_gaps })
}
