//! Config-driven command layer behind the `denstrack` binary.
//!
//! A run is described by one JSON document (unknown keys rejected). Each
//! command validates the parts it needs, runs the corresponding library
//! operation, and writes CSV/JSON artifacts into `output_dir`. Existing
//! output files are only overwritten when `force` is set. Data goes to
//! files; everything printed goes to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    convergence_study, mc_density, weak_gap_demo, ConvergenceTable, McConfig, Reference,
};
use crate::error::{Error, Result};
use crate::grid_density::{init_density, GridDensity, GridSpec, InitialDensitySpec};
use crate::model::SdeModel;
use crate::propagator::{bump_density, consistency_residual, evolve, StepMode, StepReport};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "affine" (params [c0, c1, s]) or "sine-diffusion" (params [c0, c1, s0, s1]).
    pub family: String,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// One of "gaussian", "cauchy", "uniform", "sine-perturbed-uniform",
    /// "from-file", "bump" (the last is accepted by `consistency` only).
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t: f64,
    #[serde(default)]
    pub n: Option<u32>,
    #[serde(default)]
    pub n_list: Option<Vec<u32>>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub paths: u64,
    pub steps: u32,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub initial: InitialConfig,
    pub time: TimeConfig,
    /// "cdf-redistribution" or "midpoint-quadrature"; defaults by dimension.
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub snapshot_every: u32,
    /// "ou-exact" or "fine-grid-self" (converge); defaults to ou-exact when
    /// the model/initial pair admits it.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub tau_list: Option<Vec<f64>>,
    #[serde(default)]
    pub mc: Option<McSection>,
}

/// Either a standard initial density or the bump profile reserved for the
/// consistency command.
pub enum InitialKind {
    Density(InitialDensitySpec),
    Bump { center: f64, radius: f64 },
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

pub fn build_model(cfg: &ModelConfig) -> Result<SdeModel> {
    match cfg.family.as_str() {
        "affine" => {
            let [c0, c1, s] = cfg.params[..] else {
                return Err(Error::Config(format!(
                    "model.family affine takes params [c0, c1, s], got {} values",
                    cfg.params.len()
                )));
            };
            SdeModel::affine(c0, c1, s)
        }
        "sine-diffusion" => {
            let [c0, c1, s0, s1] = cfg.params[..] else {
                return Err(Error::Config(format!(
                    "model.family sine-diffusion takes params [c0, c1, s0, s1], got {} values",
                    cfg.params.len()
                )));
            };
            SdeModel::sine_diffusion(c0, c1, s0, s1)
        }
        other => Err(Error::Config(format!(
            "unknown model.family {other:?}; built-in families are \"affine\" and \"sine-diffusion\""
        ))),
    }
}

pub fn build_grid(cfg: &GridConfig) -> Result<GridSpec> {
    if cfg.dim != cfg.lower.len() {
        return Err(Error::Config(format!(
            "grid.dim = {} does not match grid.lower length {}",
            cfg.dim,
            cfg.lower.len()
        )));
    }
    GridSpec::new(cfg.lower.clone(), cfg.upper.clone(), cfg.cells.clone())
}

pub fn build_initial(cfg: &InitialConfig) -> Result<InitialKind> {
    let want = |k: usize| -> Result<()> {
        if cfg.params.len() == k {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "initial.kind {:?} takes {k} params, got {}",
                cfg.kind,
                cfg.params.len()
            )))
        }
    };
    let spec = match cfg.kind.as_str() {
        "gaussian" => {
            want(2)?;
            InitialDensitySpec::Gaussian { mean: cfg.params[0], variance: cfg.params[1] }
        }
        "cauchy" => {
            want(2)?;
            InitialDensitySpec::Cauchy { location: cfg.params[0], scale: cfg.params[1] }
        }
        "uniform" => {
            want(2)?;
            InitialDensitySpec::Uniform { a: cfg.params[0], b: cfg.params[1] }
        }
        "sine-perturbed-uniform" => {
            want(1)?;
            InitialDensitySpec::SinePerturbedUniform { n: cfg.params[0] as u32 }
        }
        "from-file" => {
            let path = cfg.path.clone().ok_or_else(|| {
                Error::Config("initial.kind from-file requires a \"path\" field".into())
            })?;
            InitialDensitySpec::FromFile { path }
        }
        "bump" => {
            want(2)?;
            return Ok(InitialKind::Bump { center: cfg.params[0], radius: cfg.params[1] });
        }
        other => {
            return Err(Error::Config(format!("unknown initial.kind {other:?}")));
        }
    };
    spec.validate()?;
    Ok(InitialKind::Density(spec))
}

fn build_mode(cfg: &RunConfig, grid: &GridSpec) -> Result<StepMode> {
    match cfg.mode.as_deref() {
        None => Ok(if grid.dim() == 1 {
            StepMode::CdfRedistribution
        } else {
            StepMode::MidpointQuadrature
        }),
        Some("cdf-redistribution") => Ok(StepMode::CdfRedistribution),
        Some("midpoint-quadrature") => Ok(StepMode::MidpointQuadrature),
        Some(other) => Err(Error::Config(format!("unknown mode {other:?}"))),
    }
}

fn density_spec(cfg: &RunConfig) -> Result<InitialDensitySpec> {
    match build_initial(&cfg.initial)? {
        InitialKind::Density(d) => Ok(d),
        InitialKind::Bump { .. } => Err(Error::Config(
            "the bump initial density is only valid for the consistency command".into(),
        )),
    }
}

/// Refuse to clobber existing artifacts unless forced.
fn guard_outputs(dir: &Path, names: &[String], force: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    if force {
        return Ok(());
    }
    for name in names {
        let p = dir.join(name);
        if p.exists() {
            return Err(Error::Config(format!(
                "output file {} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn write_step_reports(path: &Path, reports: &[StepReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "tau", "mass_in", "mass_out", "leakage"])?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record(&[
            (i + 1).to_string(),
            r.tau.to_string(),
            r.mass_in.to_string(),
            r.mass_out.to_string(),
            r.leakage_this_step.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PropagateSummary<'a> {
    mass: f64,
    leaked_mass: f64,
    moments: MomentBlock,
    steps: u32,
    tau: f64,
    stiff_steps: usize,
    narrow_kernel_steps: usize,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct MomentBlock {
    mean: Vec<f64>,
    second: Vec<f64>,
}

fn moment_block(u: &GridDensity) -> Result<MomentBlock> {
    Ok(MomentBlock { mean: u.moment(1)?, second: u.moment(2)? })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn warn_steps(reports: &[StepReport]) {
    let stiff = reports.iter().filter(|r| r.stiff_warning).count();
    if stiff > 0 {
        eprintln!(
            "warning: {stiff} step(s) ran with an orientation-reversing mean map (1 + b' tau <= 0)"
        );
    }
    let narrow = reports.iter().filter(|r| r.narrow_kernel_warning).count();
    if narrow > 0 {
        eprintln!(
            "warning: {narrow} quadrature step(s) had kernel width below two cell spacings; \
             results are unreliable, use cdf-redistribution or refine the grid"
        );
    }
}

/// Evolve the configured density and write density/report/summary artifacts.
pub fn cmd_propagate(cfg: &RunConfig, force: bool) -> Result<()> {
    let model = build_model(&cfg.model)?;
    let grid = build_grid(&cfg.grid)?;
    let mode = build_mode(cfg, &grid)?;
    let spec = density_spec(cfg)?;
    let n = cfg
        .time
        .n
        .ok_or_else(|| Error::Config("propagate requires time.n".into()))?;

    let mut names = vec![
        "final_density.csv".to_string(),
        "step_reports.csv".to_string(),
        "summary.json".to_string(),
    ];
    if cfg.snapshot_every > 0 {
        for k in 1..=n {
            if k % cfg.snapshot_every == 0 {
                names.push(format!("snapshot_{k:05}.csv"));
            }
        }
    }
    guard_outputs(&cfg.output_dir, &names, force)?;

    let u0 = init_density(&spec, &grid)?;
    let result = evolve(&u0, &model, cfg.time.t, n, mode, cfg.snapshot_every)?;
    warn_steps(&result.reports);

    result.final_density.write_csv(&cfg.output_dir.join("final_density.csv"))?;
    for (i, (_, snap)) in result.snapshots.iter().enumerate() {
        let k = (i as u32 + 1) * cfg.snapshot_every;
        snap.write_csv(&cfg.output_dir.join(format!("snapshot_{k:05}.csv")))?;
    }
    write_step_reports(&cfg.output_dir.join("step_reports.csv"), &result.reports)?;

    let summary = PropagateSummary {
        mass: result.final_density.l1_norm(),
        leaked_mass: result.final_density.leaked_mass(),
        moments: moment_block(&result.final_density)?,
        steps: n,
        tau: cfg.time.t / n as f64,
        stiff_steps: result.reports.iter().filter(|r| r.stiff_warning).count(),
        narrow_kernel_steps: result
            .reports
            .iter()
            .filter(|r| r.narrow_kernel_warning)
            .count(),
        config: cfg,
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    eprintln!(
        "propagate: {} steps, mass {:.12}, leaked {:.3e}",
        n,
        summary.mass,
        summary.leaked_mass
    );
    Ok(())
}

#[derive(Serialize)]
struct ConvergeSidecar<'a> {
    table: &'a ConvergenceTable,
    reference: &'a str,
    config: &'a RunConfig,
}

/// Convergence study over time.n_list; writes the table CSV plus a JSON
/// sidecar and prints the fitted rate to stderr.
pub fn cmd_converge(cfg: &RunConfig, force: bool) -> Result<()> {
    let model = build_model(&cfg.model)?;
    let grid = build_grid(&cfg.grid)?;
    let spec = density_spec(cfg)?;
    let n_list = cfg
        .time
        .n_list
        .clone()
        .ok_or_else(|| Error::Config("converge requires time.n_list".into()))?;
    if n_list.is_empty() {
        return Err(Error::Config("time.n_list must be nonempty".into()));
    }

    let reference = match cfg.reference.as_deref() {
        Some("ou-exact") => Reference::OuExact,
        Some("fine-grid-self") => Reference::FineGridSelf,
        Some(other) => {
            return Err(Error::Config(format!("unknown reference {other:?}")));
        }
        None => {
            // pick the exact reference whenever it is admissible
            let pure_ou = cfg.model.family == "affine" && cfg.model.params.first() == Some(&0.0);
            let supported_u0 = matches!(cfg.initial.kind.as_str(), "gaussian" | "cauchy");
            if pure_ou && supported_u0 {
                Reference::OuExact
            } else {
                Reference::FineGridSelf
            }
        }
    };

    guard_outputs(
        &cfg.output_dir,
        &["convergence.csv".into(), "convergence.json".into()],
        force,
    )?;

    let table = convergence_study(&model, &spec, &grid, cfg.time.t, &n_list, reference)?;

    let mut w = csv::Writer::from_path(cfg.output_dir.join("convergence.csv"))?;
    w.write_record(["n", "error", "seconds"])?;
    for r in &table.rows {
        w.write_record(&[r.n.to_string(), r.error.to_string(), r.seconds.to_string()])?;
    }
    w.flush()?;

    let reference_name = match reference {
        Reference::OuExact => "ou-exact",
        Reference::FineGridSelf => "fine-grid-self",
    };
    write_json(
        &cfg.output_dir.join("convergence.json"),
        &ConvergeSidecar { table: &table, reference: reference_name, config: cfg },
    )?;

    match (table.fitted_rate, table.fit_r2) {
        (Some(rate), Some(r2)) => {
            eprintln!("converge: fitted rate {rate:.4} (r^2 = {r2:.4}) against {reference_name}");
        }
        _ => eprintln!(
            "converge: no rate fitted (need >= 3 rows above the grid floor {:.3e})",
            table.grid_floor
        ),
    }
    Ok(())
}

/// Consistency residuals over tau_list with the bump profile; writes
/// (tau, residual, ratio) rows.
pub fn cmd_consistency(cfg: &RunConfig, force: bool) -> Result<()> {
    let model = build_model(&cfg.model)?;
    let grid = build_grid(&cfg.grid)?;
    let mode = build_mode(cfg, &grid)?;
    let InitialKind::Bump { center, radius } = build_initial(&cfg.initial)? else {
        return Err(Error::Config(
            "consistency requires initial.kind = \"bump\" (smooth compactly supported data)"
                .into(),
        ));
    };
    let tau_list = cfg
        .tau_list
        .clone()
        .ok_or_else(|| Error::Config("consistency requires tau_list".into()))?;
    if tau_list.is_empty() {
        return Err(Error::Config("tau_list must be nonempty".into()));
    }
    if tau_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Config("tau_list entries must be positive".into()));
    }

    guard_outputs(&cfg.output_dir, &["consistency.csv".into()], force)?;

    let u = bump_density(&grid, center, radius)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("consistency.csv"))?;
    w.write_record(["tau", "residual", "ratio"])?;
    for &tau in &tau_list {
        let residual = consistency_residual(&u, &model, tau, mode)?;
        w.write_record(&[
            tau.to_string(),
            residual.to_string(),
            (residual / tau).to_string(),
        ])?;
        eprintln!("consistency: tau = {tau:.5}, residual = {residual:.6e}, ratio = {:.4}", residual / tau);
    }
    w.flush()?;
    Ok(())
}

/// Weak-vs-L1 gap demonstration; builds its own [0, 1] grid with 512 n cells.
pub fn cmd_weakgap(n: u32, output_dir: &Path, force: bool) -> Result<()> {
    if n < 1 {
        return Err(Error::Config("weakgap requires n >= 1".into()));
    }
    guard_outputs(output_dir, &["weakgap.csv".into()], force)?;
    let grid = GridSpec::line(0.0, 1.0, 512 * n as usize)?;
    let report = weak_gap_demo(n, &grid)?;

    let mut w = csv::Writer::from_path(output_dir.join("weakgap.csv"))?;
    w.write_record([
        "n",
        "l1_gap",
        "charfn_gap_xi_1",
        "charfn_gap_xi_2pi",
        "charfn_gap_xi_4pi",
    ])?;
    w.write_record(&[
        report.n.to_string(),
        report.l1_gap.to_string(),
        report.charfn_gaps[0].1.to_string(),
        report.charfn_gaps[1].1.to_string(),
        report.charfn_gaps[2].1.to_string(),
    ])?;
    w.flush()?;

    eprintln!(
        "weakgap: n = {}, l1 gap = {:.6} (2/pi = {:.6}), |charfn gap|(xi=1) = {:.6}",
        report.n,
        report.l1_gap,
        2.0 / std::f64::consts::PI,
        report.charfn_gaps[0].1
    );
    Ok(())
}

#[derive(Serialize)]
struct McSummary<'a> {
    mass: f64,
    leaked_mass: f64,
    moments: MomentBlock,
    paths: u64,
    steps: u32,
    seed: u64,
    config: &'a RunConfig,
}

/// Monte Carlo histogram of the Euler-Maruyama chain.
pub fn cmd_mc(cfg: &RunConfig, force: bool) -> Result<()> {
    let model = build_model(&cfg.model)?;
    let grid = build_grid(&cfg.grid)?;
    let spec = density_spec(cfg)?;
    let mc = cfg
        .mc
        .ok_or_else(|| Error::Config("mc requires an \"mc\" section (paths, steps)".into()))?;
    let mc_cfg = McConfig { paths: mc.paths, steps: mc.steps, seed: cfg.seed };
    mc_cfg.validate()?;

    guard_outputs(
        &cfg.output_dir,
        &["mc_density.csv".into(), "mc_summary.json".into()],
        force,
    )?;

    let hist = mc_density(&model, &spec, cfg.time.t, &mc_cfg, &grid)?;
    hist.write_csv(&cfg.output_dir.join("mc_density.csv"))?;
    let summary = McSummary {
        mass: hist.l1_norm(),
        leaked_mass: hist.leaked_mass(),
        moments: moment_block(&hist)?,
        paths: mc.paths,
        steps: mc.steps,
        seed: cfg.seed,
        config: cfg,
    };
    write_json(&cfg.output_dir.join("mc_summary.json"), &summary)?;
    eprintln!(
        "mc: {} paths x {} steps, mass {:.6}, leaked {:.3e}",
        mc.paths, mc.steps, summary.mass, summary.leaked_mass
    );
    Ok(())
}
