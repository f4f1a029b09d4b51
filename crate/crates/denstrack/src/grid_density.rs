//! Densities sampled on uniform rectangular grids.
//!
//! A `GridDensity` stores per-cell average values (units of probability per
//! volume) together with the mass that has left the computational box. The
//! box truncates a whole-space problem, so lost mass is tracked explicitly in
//! `leaked_mass` instead of being renormalized away.
//!
//! All reductions (norms, moments, characteristic functions) run through a
//! fixed-order pairwise summation so results are bit-reproducible and keep
//! roundoff near the log of the cell count.

use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::special::{cauchy_cdf, normal_cdf, normal_sf};

/// Uniform rectangular grid over a box, 1D or 2D.
///
/// 2D values are stored row-major with the x index slow: `flat = ix * ny + iy`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if upper.len() != dim || cells.len() != dim {
            return Err(Error::InvalidGrid(
                "lower, upper, cells must have equal lengths".into(),
            ));
        }
        for k in 0..dim {
            if !lower[k].is_finite() || !upper[k].is_finite() {
                return Err(Error::InvalidGrid("bounds must be finite".into()));
            }
            if !(lower[k] < upper[k]) {
                return Err(Error::InvalidGrid(format!(
                    "lower must be < upper on axis {k}: [{}, {}]",
                    lower[k], upper[k]
                )));
            }
            if cells[k] < 8 {
                return Err(Error::InvalidGrid(format!(
                    "at least 8 cells per axis required, axis {k} has {}",
                    cells[k]
                )));
            }
        }
        Ok(Self { dim, lower, upper, cells })
    }

    pub fn line(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![cells])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|k| self.spacing(k)).product()
    }

    /// Cell edge i on an axis, i in 0..=cells\[axis\].
    pub fn edge(&self, axis: usize, i: usize) -> f64 {
        let frac = i as f64 / self.cells[axis] as f64;
        self.lower[axis] + (self.upper[axis] - self.lower[axis]) * frac
    }

    /// Cell center i on an axis.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + (i as f64 + 0.5) * self.spacing(axis)
    }

    /// Coordinates of the center of the flat-indexed cell.
    pub fn center_of(&self, flat: usize) -> Vec<f64> {
        match self.dim {
            1 => vec![self.center(0, flat)],
            _ => {
                let ny = self.cells[1];
                vec![self.center(0, flat / ny), self.center(1, flat % ny)]
            }
        }
    }
}

/// Deterministic pairwise summation; fixed order regardless of thread count.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        let mut acc = 0.0;
        for &x in v {
            acc += x;
        }
        acc
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Nonnegative function sampled as per-cell averages, plus leaked mass.
#[derive(Clone, Debug)]
pub struct GridDensity {
    spec: GridSpec,
    values: Vec<f64>,
    leaked_mass: f64,
}

impl GridDensity {
    /// Build from raw per-cell values; rejects negatives, non-finite entries,
    /// and length mismatches.
    pub fn from_values(spec: GridSpec, values: Vec<f64>, leaked_mass: f64) -> Result<Self> {
        if values.len() != spec.cell_count() {
            return Err(Error::InvalidDensity(format!(
                "expected {} cell values, got {}",
                spec.cell_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDensity(
                "cell values must be finite and nonnegative".into(),
            ));
        }
        if !(0.0..=1.0 + 1e-9).contains(&leaked_mass) {
            return Err(Error::InvalidDensity(format!(
                "leaked_mass must lie in [0, 1], got {leaked_mass}"
            )));
        }
        Ok(Self { spec, values, leaked_mass })
    }

    pub(crate) fn new_unchecked(spec: GridSpec, values: Vec<f64>, leaked_mass: f64) -> Self {
        Self { spec, values, leaked_mass }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn leaked_mass(&self) -> f64 {
        self.leaked_mass
    }

    /// Total variation mass on the grid: sum |u| * cell volume.
    pub fn l1_norm(&self) -> f64 {
        let vol = self.spec.cell_volume();
        let terms: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        pairwise_sum(&terms) * vol
    }

    /// L1 distance to a density on the identical grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::GridMismatch(
                "l1_distance requires identical grid specs".into(),
            ));
        }
        let vol = self.spec.cell_volume();
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(pairwise_sum(&terms) * vol)
    }

    /// k-th raw moment per axis: sum x_axis^k * u * cell volume.
    pub fn moment(&self, k: u32) -> Result<Vec<f64>> {
        if k > 4 {
            return Err(Error::Precondition("moment order must be <= 4".into()));
        }
        let vol = self.spec.cell_volume();
        let mut out = Vec::with_capacity(self.spec.dim);
        for axis in 0..self.spec.dim {
            let terms: Vec<f64> = self
                .values
                .iter()
                .enumerate()
                .map(|(flat, &v)| {
                    let x = self.axis_coord(axis, flat);
                    x.powi(k as i32) * v
                })
                .collect();
            out.push(pairwise_sum(&terms) * vol);
        }
        Ok(out)
    }

    /// Discrete characteristic function: sum exp(i xi . x) * u * cell volume.
    pub fn characteristic_function(&self, xi: &[f64]) -> Result<Complex64> {
        if xi.len() != self.spec.dim {
            return Err(Error::Domain(format!(
                "frequency has dimension {}, grid has dimension {}",
                xi.len(),
                self.spec.dim
            )));
        }
        let vol = self.spec.cell_volume();
        let mut re = Vec::with_capacity(self.values.len());
        let mut im = Vec::with_capacity(self.values.len());
        for (flat, &v) in self.values.iter().enumerate() {
            let mut phase = 0.0;
            for (axis, &f) in xi.iter().enumerate() {
                phase += f * self.axis_coord(axis, flat);
            }
            re.push(phase.cos() * v);
            im.push(phase.sin() * v);
        }
        Ok(Complex64::new(pairwise_sum(&re) * vol, pairwise_sum(&im) * vol))
    }

    fn axis_coord(&self, axis: usize, flat: usize) -> f64 {
        match self.spec.dim {
            1 => self.spec.center(0, flat),
            _ => {
                let ny = self.spec.cells[1];
                if axis == 0 {
                    self.spec.center(0, flat / ny)
                } else {
                    self.spec.center(1, flat % ny)
                }
            }
        }
    }

    /// Write the density in the cell-per-record CSV format
    /// (`x[,y],value`, header included).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        match self.spec.dim {
            1 => {
                w.write_record(["x", "value"])?;
                for (i, v) in self.values.iter().enumerate() {
                    w.write_record(&[self.spec.center(0, i).to_string(), v.to_string()])?;
                }
            }
            _ => {
                w.write_record(["x", "y", "value"])?;
                let ny = self.spec.cells[1];
                for (flat, v) in self.values.iter().enumerate() {
                    w.write_record(&[
                        self.spec.center(0, flat / ny).to_string(),
                        self.spec.center(1, flat % ny).to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read a density from the CSV format onto the given grid. The record
    /// count must match the cell count exactly; NaN and negative values are
    /// rejected.
    pub fn read_csv(path: &Path, spec: GridSpec) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let value_col = spec.dim; // x[,y],value
        let mut values = Vec::with_capacity(spec.cell_count());
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != spec.dim + 1 {
                return Err(Error::Format(format!(
                    "expected {} columns, found {}",
                    spec.dim + 1,
                    rec.len()
                )));
            }
            let v: f64 = rec[value_col]
                .parse()
                .map_err(|e| Error::Format(format!("bad value field: {e}")))?;
            if v.is_nan() {
                return Err(Error::Format("NaN value rejected".into()));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Format(format!("invalid density value {v}")));
            }
            values.push(v);
        }
        if values.len() != spec.cell_count() {
            return Err(Error::Format(format!(
                "expected {} records, found {}",
                spec.cell_count(),
                values.len()
            )));
        }
        let mass = pairwise_sum(&values) * spec.cell_volume();
        let leaked = (1.0 - mass).max(0.0);
        Ok(Self { spec, values, leaked_mass: leaked })
    }
}

/// Named initial densities. Scalar-parameter kinds act per axis as a product
/// density when the grid is 2D; the sine-perturbed family is 1D only.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialDensitySpec {
    Gaussian { mean: f64, variance: f64 },
    Cauchy { location: f64, scale: f64 },
    Uniform { a: f64, b: f64 },
    SinePerturbedUniform { n: u32 },
    FromFile { path: PathBuf },
}

impl InitialDensitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialDensitySpec::Gaussian { mean, variance } => {
                if !mean.is_finite() || !variance.is_finite() || *variance <= 0.0 {
                    return Err(Error::InvalidDensity(format!(
                        "gaussian requires finite mean and variance > 0, got ({mean}, {variance})"
                    )));
                }
            }
            InitialDensitySpec::Cauchy { location, scale } => {
                if !location.is_finite() || !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::InvalidDensity(format!(
                        "cauchy requires finite location and scale > 0, got ({location}, {scale})"
                    )));
                }
            }
            InitialDensitySpec::Uniform { a, b } => {
                if !a.is_finite() || !b.is_finite() || !(a < b) {
                    return Err(Error::InvalidDensity(format!(
                        "uniform requires a < b, got ({a}, {b})"
                    )));
                }
            }
            InitialDensitySpec::SinePerturbedUniform { n } => {
                if *n < 1 {
                    return Err(Error::InvalidDensity(
                        "sine-perturbed uniform requires n >= 1".into(),
                    ));
                }
            }
            InitialDensitySpec::FromFile { .. } => {}
        }
        Ok(())
    }
}

/// Mass of `[lo, hi]` under a normal law, computed from the tail that avoids
/// cancellation.
fn normal_cell_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    let zl = (lo - mean) / sd;
    let zh = (hi - mean) / sd;
    let m = if zl + zh > 0.0 {
        normal_sf(zl) - normal_sf(zh)
    } else {
        normal_cdf(zh) - normal_cdf(zl)
    };
    m.max(0.0)
}

/// Per-axis cell masses for the analytic-CDF initializers.
fn axis_masses(spec: &GridSpec, axis: usize, density: &InitialDensitySpec) -> Vec<f64> {
    let n = spec.cells()[axis];
    let mut masses = Vec::with_capacity(n);
    for i in 0..n {
        let lo = spec.edge(axis, i);
        let hi = spec.edge(axis, i + 1);
        let m = match density {
            InitialDensitySpec::Gaussian { mean, variance } => {
                normal_cell_mass(lo, hi, *mean, variance.sqrt())
            }
            InitialDensitySpec::Cauchy { location, scale } => {
                (cauchy_cdf(hi, *location, *scale) - cauchy_cdf(lo, *location, *scale)).max(0.0)
            }
            InitialDensitySpec::Uniform { a, b } => {
                (hi.min(*b) - lo.max(*a)).max(0.0) / (b - a)
            }
            _ => unreachable!("axis_masses only serves CDF-based initializers"),
        };
        masses.push(m);
    }
    masses
}

/// Initialize a density on the grid.
///
/// Gaussian, Cauchy, and Uniform cells hold exact averages from CDF
/// differences, so their on-grid mass is exact up to roundoff. The
/// sine-perturbed uniform uses midpoint evaluation (its mass is exact only
/// when the grid aligns with `[0, 1]` and resolves the oscillation).
/// `leaked_mass` records whatever the box missed.
pub fn init_density(density: &InitialDensitySpec, spec: &GridSpec) -> Result<GridDensity> {
    density.validate()?;
    let dim = spec.dim();
    let vol = spec.cell_volume();

    let values: Vec<f64> = match density {
        InitialDensitySpec::Gaussian { .. }
        | InitialDensitySpec::Cauchy { .. }
        | InitialDensitySpec::Uniform { .. } => {
            if dim == 1 {
                axis_masses(spec, 0, density).iter().map(|m| m / vol).collect()
            } else {
                let mx = axis_masses(spec, 0, density);
                let my = axis_masses(spec, 1, density);
                let mut values = Vec::with_capacity(spec.cell_count());
                for vx in &mx {
                    for vy in &my {
                        values.push(vx * vy / vol);
                    }
                }
                values
            }
        }
        InitialDensitySpec::SinePerturbedUniform { n } => {
            if dim != 1 {
                return Err(Error::Unsupported(
                    "sine-perturbed uniform density is 1D only".into(),
                ));
            }
            let freq = 2.0 * (*n as f64) * std::f64::consts::PI;
            (0..spec.cells()[0])
                .map(|i| {
                    let x = spec.center(0, i);
                    if (0.0..=1.0).contains(&x) {
                        (1.0 + (freq * x).sin()).max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        InitialDensitySpec::FromFile { path } => {
            return GridDensity::read_csv(path, spec.clone());
        }
    };

    let mass = pairwise_sum(&values) * vol;
    Ok(GridDensity::new_unchecked(spec.clone(), values, (1.0 - mass).max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(lower: f64, upper: f64, n: usize) -> GridSpec {
        GridSpec::line(lower, upper, n).unwrap()
    }

    #[test]
    fn uniform_init_exact() {
        let g = grid(-2.0, 2.0, 400);
        let u = init_density(&InitialDensitySpec::Uniform { a: 0.0, b: 1.0 }, &g).unwrap();
        assert!((u.l1_norm() - 1.0).abs() < 1e-12);
        // interior [0,1] cells carry value 1
        for i in 0..400 {
            let x = g.center(0, i);
            if x > 0.01 && x < 0.99 {
                assert!((u.values()[i] - 1.0).abs() < 1e-12, "x = {x}");
            }
        }
    }

    #[test]
    fn gaussian_init_negligible_leak() {
        let g = grid(-8.0, 8.0, 2048);
        let u = init_density(&InitialDensitySpec::Gaussian { mean: 0.0, variance: 1.0 }, &g)
            .unwrap();
        assert!(u.leaked_mass() < 1e-14, "leak {}", u.leaked_mass());
        assert!((u.l1_norm() + u.leaked_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sine_perturbed_mass_and_positivity() {
        let g = grid(0.0, 1.0, 512 * 3);
        let u =
            init_density(&InitialDensitySpec::SinePerturbedUniform { n: 3 }, &g).unwrap();
        assert!(u.values().iter().all(|v| *v >= 0.0));
        assert!((u.l1_norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn l1_norm_zero_and_homogeneous() {
        let g = grid(-1.0, 1.0, 64);
        let zero = GridDensity::from_values(g.clone(), vec![0.0; 64], 0.0).unwrap();
        assert_eq!(zero.l1_norm(), 0.0);

        let u = init_density(&InitialDensitySpec::Gaussian { mean: 0.0, variance: 0.1 }, &g)
            .unwrap();
        let doubled = GridDensity::from_values(
            g,
            u.values().iter().map(|v| 2.0 * v).collect(),
            0.0,
        )
        .unwrap();
        assert!((doubled.l1_norm() - 2.0 * u.l1_norm()).abs() < 1e-12);
    }

    #[test]
    fn l1_distance_self_zero_and_mismatch() {
        let g = grid(-1.0, 1.0, 64);
        let u = init_density(&InitialDensitySpec::Gaussian { mean: 0.0, variance: 0.1 }, &g)
            .unwrap();
        assert_eq!(u.l1_distance(&u).unwrap(), 0.0);
        let other = init_density(
            &InitialDensitySpec::Gaussian { mean: 0.0, variance: 0.1 },
            &grid(-1.0, 1.0, 128),
        )
        .unwrap();
        assert!(u.l1_distance(&other).is_err());
    }

    #[test]
    fn sine_vs_uniform_gap_two_over_pi() {
        for n in [1u32, 4] {
            let g = grid(0.0, 1.0, 512 * n as usize);
            let v = init_density(&InitialDensitySpec::SinePerturbedUniform { n }, &g).unwrap();
            let u = init_density(&InitialDensitySpec::Uniform { a: 0.0, b: 1.0 }, &g).unwrap();
            let gap = v.l1_distance(&u).unwrap();
            assert!((gap - 2.0 / PI).abs() < 1e-4, "n = {n}, gap = {gap}");
        }
    }

    #[test]
    fn distant_gaussians_separate_fully() {
        let g = grid(-16.0, 16.0, 1024);
        let u = init_density(&InitialDensitySpec::Gaussian { mean: -8.0, variance: 1.0 }, &g)
            .unwrap();
        let v = init_density(&InitialDensitySpec::Gaussian { mean: 8.0, variance: 1.0 }, &g)
            .unwrap();
        let d = u.l1_distance(&v).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "d = {d}");
    }

    #[test]
    fn moments_match_analytic() {
        let g = grid(-8.0, 8.0, 8192);
        let u = init_density(&InitialDensitySpec::Gaussian { mean: 0.7, variance: 1.0 }, &g)
            .unwrap();
        assert!((u.moment(0).unwrap()[0] - 1.0).abs() < 1e-10);
        assert!((u.moment(1).unwrap()[0] - 0.7).abs() < 1e-6);

        let g01 = grid(0.0, 1.0, 8192);
        let uni = init_density(&InitialDensitySpec::Uniform { a: 0.0, b: 1.0 }, &g01).unwrap();
        assert!((uni.moment(2).unwrap()[0] - 1.0 / 3.0).abs() < 1e-8);
        assert!(uni.moment(5).is_err());
    }

    #[test]
    fn characteristic_function_values() {
        let g = grid(-8.0, 8.0, 4096);
        let u = init_density(&InitialDensitySpec::Gaussian { mean: 0.0, variance: 1.0 }, &g)
            .unwrap();
        let at_zero = u.characteristic_function(&[0.0]).unwrap();
        assert!((at_zero.re - u.l1_norm()).abs() < 1e-12);
        assert!(at_zero.im.abs() < 1e-12);

        let at_one = u.characteristic_function(&[1.0]).unwrap();
        assert!((at_one.re - (-0.5f64).exp()).abs() < 1e-6);
        assert!(at_one.im.abs() < 1e-9);

        let g2 = grid(-2.0, 2.0, 400);
        let uni = init_density(&InitialDensitySpec::Uniform { a: 0.0, b: 1.0 }, &g2).unwrap();
        let at_2pi = uni.characteristic_function(&[2.0 * PI]).unwrap();
        assert!(at_2pi.norm() < 1e-8, "|phi| = {}", at_2pi.norm());
    }

    #[test]
    fn refinement_leaves_mass_unchanged() {
        for n in [512usize, 1024] {
            let u = init_density(
                &InitialDensitySpec::Gaussian { mean: 0.0, variance: 1.0 },
                &grid(-8.0, 8.0, n),
            )
            .unwrap();
            let u2 = init_density(
                &InitialDensitySpec::Gaussian { mean: 0.0, variance: 1.0 },
                &grid(-8.0, 8.0, 2 * n),
            )
            .unwrap();
            assert!((u.l1_norm() - u2.l1_norm()).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_round_trip_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("density.csv");
        let g = grid(-2.0, 2.0, 64);
        let u = init_density(&InitialDensitySpec::Gaussian { mean: 0.0, variance: 0.5 }, &g)
            .unwrap();
        u.write_csv(&path).unwrap();
        let back = GridDensity::read_csv(&path, g.clone()).unwrap();
        assert_eq!(back.values(), u.values());

        // wrong record count
        let small = grid(-2.0, 2.0, 32);
        assert!(matches!(
            GridDensity::read_csv(&path, small),
            Err(Error::Format(_))
        ));

        // NaN rejected
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "x,value\n0.0,NaN\n").unwrap();
        assert!(GridDensity::read_csv(&bad, g).is_err());
    }

    #[test]
    fn grid_2d_product_density() {
        let g = GridSpec::new(vec![-6.0, -6.0], vec![6.0, 6.0], vec![96, 96]).unwrap();
        let u = init_density(&InitialDensitySpec::Gaussian { mean: 0.0, variance: 1.0 }, &g)
            .unwrap();
        assert!((u.l1_norm() - 1.0).abs() < 1e-8);
        let m1 = u.moment(1).unwrap();
        assert!(m1[0].abs() < 1e-10 && m1[1].abs() < 1e-10);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GridSpec::line(1.0, 1.0, 64).is_err());
        assert!(GridSpec::line(0.0, 1.0, 4).is_err());
        assert!(InitialDensitySpec::Gaussian { mean: 0.0, variance: 0.0 }
            .validate()
            .is_err());
        assert!(InitialDensitySpec::Uniform { a: 1.0, b: 0.0 }.validate().is_err());
        assert!(InitialDensitySpec::Cauchy { location: 0.0, scale: -1.0 }
            .validate()
            .is_err());
        assert!(InitialDensitySpec::SinePerturbedUniform { n: 0 }.validate().is_err());
    }

    fn random_density(seed: u64, g: &GridSpec) -> GridDensity {
        let mut rng = crate::rng::CounterRng::keyed(seed, 0);
        let mut vals: Vec<f64> = (0..g.cell_count()).map(|_| rng.uniform()).collect();
        let mass = pairwise_sum(&vals) * g.cell_volume();
        vals.iter_mut().for_each(|v| *v /= mass);
        GridDensity::from_values(g.clone(), vals, 0.0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn triangle_inequality(sa in 0u64..1000, sb in 0u64..1000, sc in 0u64..1000) {
            let g = grid(-1.0, 1.0, 64);
            let (u, v, w) = (random_density(sa, &g), random_density(sb, &g), random_density(sc, &g));
            let duw = u.l1_distance(&w).unwrap();
            let duv = u.l1_distance(&v).unwrap();
            let dvw = v.l1_distance(&w).unwrap();
            prop_assert!(duw <= duv + dvw + 1e-12);
        }

        #[test]
        fn charfn_bounded_by_mass(seed in 0u64..1000, xi in -40.0f64..40.0) {
            let g = grid(-1.0, 1.0, 64);
            let u = random_density(seed, &g);
            let phi = u.characteristic_function(&[xi]).unwrap();
            prop_assert!(phi.norm() <= u.l1_norm() + 1e-12);
        }

        #[test]
        fn init_never_negative(mean in -3.0f64..3.0, var in 0.01f64..4.0) {
            let g = grid(-6.0, 6.0, 128);
            let u = init_density(&InitialDensitySpec::Gaussian { mean, variance: var }, &g).unwrap();
            prop_assert!(u.values().iter().all(|v| *v >= 0.0));
        }
    }
}
