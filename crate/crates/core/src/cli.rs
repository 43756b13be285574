//! The `mfplan` command line: test-case generation, solving, KL costs,
//! diagnostics and particle tracing.
//!
//! Every command that writes output also writes `manifest.json` with the
//! resolved configuration, its SHA-256, the seeds and hashes of every input
//! and output file. Failures print `{"error": kind, "message": ...}` on stderr
//! and exit with a nonzero code.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dual::{duality_report, DiagnosticsReport, DualPair};
use crate::error::{Error, Result};
use crate::grid::{
    read_density, read_density_slice, read_momentum, read_scalar, write_csv_1d, write_density,
    write_density_slice, write_momentum, write_scalar, Density, GridSpec, ScalarField, SpaceGrid,
};
use crate::lagrangian::{
    default_steps, path_optimality_check, sample_particles, superposition_report, trace_ensemble,
    transport_plan_summary, PathOptimalityReport, PlanSummary, SuperpositionReport, Trajectory,
};
use crate::metrics::kl_distance;
use crate::model::ModelSpec;
use crate::primal::{apriori_check, solve_planning, InitStrategy, Solution, SolverConfig};

/// Continuity residual accepted by the `continuity_ok` check.
pub const CONTINUITY_TOL: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(name = "mfplan", version, about = "Mean field planning solver and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (for `trace`, a `.csv` path names the paths file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    /// Relative duality gap used to stop the solver and in the report checks.
    #[arg(long, global = true)]
    pub tol_gap: Option<f64>,
    /// Fixed-point residual used to stop the solver.
    #[arg(long, global = true)]
    pub tol_residual: Option<f64>,
    /// Bound on the HJ violation on the support, relative to B.
    #[arg(long, global = true)]
    pub tol_hj: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a normalized test density.
    Gen(GenArgs),
    /// Solve a planning problem into a run directory.
    Solve(SolveArgs),
    /// Kantorovich-Lebesgue costs over a grid of weights.
    Kl(KlArgs),
    /// Recompute the certificate of a run directory.
    Diagnose(DiagnoseArgs),
    /// Trace particles through the velocity of a run.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Gaussian,
    Box,
    Bimodal,
    Ring,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 128)]
    pub nx: usize,
    /// Half-width of the box `[-R, R]^d`.
    #[arg(long = "R", default_value_t = 2.0)]
    pub r: f64,
    /// Center (comma separated, one entry per axis).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    pub center: Vec<f64>,
    /// Second center of the bimodal mixture.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1")]
    pub center2: Vec<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    /// Half-width of the box density.
    #[arg(long, default_value_t = 0.5)]
    pub width: f64,
    /// Ring radius.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Relative multiplicative noise in `[0, 1)`.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File name inside the output directory (default: `<kind>.bin`).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Quadratic,
    Transport,
    Kl,
}

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    /// Model JSON file; overrides the preset.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "quadratic")]
    pub preset: Preset,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Congestion weight of the transport preset.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Weight of the KL preset.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelSpec> {
        let model = match &self.model {
            Some(path) => ModelSpec::load(path)?,
            None => match self.preset {
                Preset::Quadratic => ModelSpec::quadratic(self.p),
                Preset::Transport => ModelSpec::transport(self.p, self.eps),
                Preset::Kl => ModelSpec::kl(self.a, self.p),
            },
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Args, Clone, Debug)]
pub struct SolverArgs {
    /// Time cells.
    #[arg(long, default_value_t = 64)]
    pub nt: usize,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long)]
    pub tau_primal: Option<f64>,
    #[arg(long)]
    pub tau_dual: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    pub step_ratio: f64,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// linear-blend, displacement or heat-connector.
    #[arg(long, default_value = "linear-blend")]
    pub init: InitStrategy,
    #[arg(long)]
    pub density_floor: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub check_every: usize,
}

impl SolverArgs {
    fn config(&self, tol: &Tolerances) -> SolverConfig {
        SolverConfig {
            max_iters: self.iters,
            tau_primal: self.tau_primal,
            tau_dual: self.tau_dual,
            step_ratio: self.step_ratio,
            theta: self.theta,
            stop_gap: tol.gap,
            stop_residual: tol.residual,
            init_strategy: self.init,
            density_floor: self.density_floor,
            check_every: self.check_every,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct SolveArgs {
    #[arg(long, required_unless_present = "config")]
    pub m0: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub m1: Option<PathBuf>,
    /// Re-run from a `config.json` written by an earlier solve.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Clone, Debug)]
pub struct KlArgs {
    #[arg(long)]
    pub m0: PathBuf,
    #[arg(long)]
    pub m1: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Weights `a` (comma separated).
    #[arg(long = "a", alias = "a-grid", value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    pub a_grid: Vec<f64>,
    /// Golden-section refinement around the best grid weight.
    #[arg(long)]
    pub refine: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Clone, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct TraceArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RK4 steps (default: four per time cell, at least 64).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Bins per axis of the endpoint histogram.
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub gap: f64,
    pub residual: f64,
    pub hj: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let s = SolverConfig::default();
        Tolerances { gap: s.stop_gap, residual: s.stop_residual, hj: 1e-3 }
    }
}

impl Tolerances {
    fn with_flags(mut self, cli: &Cli) -> Self {
        if let Some(v) = cli.tol_gap {
            self.gap = v;
        }
        if let Some(v) = cli.tol_residual {
            self.residual = v;
        }
        if let Some(v) = cli.tol_hj {
            self.hj = v;
        }
        self
    }
}

/// Everything needed to reproduce a solve, given the endpoint files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub m0: PathBuf,
    pub m1: PathBuf,
    pub nt: usize,
    pub model: ModelSpec,
    pub solver: SolverConfig,
    pub tolerances: Tolerances,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checks {
    pub gap_ok: bool,
    pub hj_ok: bool,
    pub continuity_ok: bool,
    pub apriori_ok: bool,
}

/// Contents of `report.json`: a pure function of the stored fields, the model
/// and the tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub diagnostics: DiagnosticsReport,
    pub checks: Checks,
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub converged: bool,
    pub tau_primal: f64,
    pub tau_dual: f64,
    pub operator_norm: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub n: usize,
    pub seed: u64,
    pub steps: usize,
    pub superposition: SuperpositionReport,
    pub optimality: PathOptimalityReport,
    pub plan: PlanSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex_digest(&fs::read(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    config: &impl Serialize,
    seeds: Vec<u64>,
    inputs: &[&Path],
    outputs: &[&str],
) -> Result<()> {
    let config = serde_json::to_value(config)?;
    let config_sha256 = hex_digest(serde_json::to_string(&config)?.as_bytes());
    let mut input_hashes = BTreeMap::new();
    for p in inputs {
        input_hashes.insert(p.display().to_string(), file_sha256(p)?);
        let side = sidecar(p);
        if side.exists() {
            input_hashes.insert(side.display().to_string(), file_sha256(&side)?);
        }
    }
    let mut output_hashes = BTreeMap::new();
    for name in outputs {
        output_hashes.insert(name.to_string(), file_sha256(&dir.join(name))?);
    }
    let manifest = Manifest {
        tool: "mfplan".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config,
        config_sha256,
        seeds,
        threads: rayon::current_num_threads(),
        inputs: input_hashes,
        outputs: output_hashes,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn point_arg(values: &[f64], d: usize, what: &str) -> Result<[f64; 2]> {
    match values.len() {
        1 => Ok([values[0], if d == 2 { values[0] } else { 0.0 }]),
        n if n == d => Ok([values[0], if d == 2 { values[1] } else { 0.0 }]),
        n => Err(Error::Invalid(format!("{what} has {n} entries, expected 1 or {d}"))),
    }
}

/// The density described by `args`, normalized to unit mass.
pub fn generate(args: &GenArgs) -> Result<Density> {
    let space = SpaceGrid::new(args.d, args.nx, args.r)?;
    if !(args.sigma > 0.0) || !(args.width > 0.0) || !(args.radius >= 0.0) {
        return Err(Error::Invalid("sigma and width must be positive, radius nonnegative".into()));
    }
    if !(0.0..1.0).contains(&args.noise) {
        return Err(Error::Invalid(format!("noise {} outside [0, 1)", args.noise)));
    }
    let c = point_arg(&args.center, args.d, "center")?;
    let c2 = point_arg(&args.center2, args.d, "center2")?;
    let d = args.d;
    let s2 = 2.0 * args.sigma * args.sigma;
    let dist2 = |x: &[f64], c: &[f64; 2]| (0..d).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>();
    let mut m = match args.kind {
        GenKind::Gaussian => Density::from_fn(space, |x| (-dist2(x, &c) / s2).exp())?,
        GenKind::Box => Density::from_fn(space, |x| {
            if (0..d).all(|a| (x[a] - c[a]).abs() <= args.width) {
                1.0
            } else {
                0.0
            }
        })?,
        GenKind::Bimodal => {
            let a = Density::from_fn(space, |x| (-dist2(x, &c) / s2).exp())?;
            let b = Density::from_fn(space, |x| (-dist2(x, &c2) / s2).exp())?;
            let values = a.values.iter().zip(&b.values).map(|(u, v)| 0.5 * (u + v)).collect();
            Density::new(space, values)?
        }
        GenKind::Ring => {
            if d != 2 {
                return Err(Error::Unsupported("ring densities need d = 2".into()));
            }
            Density::from_fn(space, |x| {
                let r = dist2(x, &c).sqrt();
                (-(r - args.radius).powi(2) / s2).exp()
            })?
        }
    };
    if args.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        for v in m.values.iter_mut() {
            *v *= 1.0 + args.noise * rng.gen_range(-1.0..1.0);
        }
        m.normalize()?;
    }
    Ok(m)
}

fn read_input(path: &Path) -> Result<Density> {
    read_density_slice(path).map_err(|e| match e {
        Error::Io(io) => Error::Invalid(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run_gen(cli: &Cli, args: &GenArgs) -> Result<serde_json::Value> {
    let dir = out_dir(cli)?;
    let name = args.name.clone().unwrap_or_else(|| {
        let kind = serde_json::to_value(args.kind).ok().and_then(|v| v.as_str().map(String::from));
        format!("{}.bin", kind.unwrap_or_else(|| "density".into()))
    });
    let m = generate(args)?;
    let path = dir.join(&name);
    write_density_slice(&path, &m)?;
    let side = format!("{name}.json");
    write_manifest(&dir, "gen", args, vec![args.seed], &[], &[&name, &side])?;
    Ok(serde_json::json!({ "file": path, "mass": m.mass() }))
}

fn report_for(model: &ModelSpec, solution: &Solution, tol: Tolerances) -> Result<RunReport> {
    let diagnostics = duality_report(model, solution)?;
    let checks = Checks {
        gap_ok: diagnostics.rel_gap <= tol.gap,
        hj_ok: diagnostics.hj_violation_support <= tol.hj * diagnostics.b.abs(),
        continuity_ok: diagnostics.continuity_residual <= CONTINUITY_TOL,
        apriori_ok: apriori_check(model, solution).all_ok(),
    };
    Ok(RunReport { diagnostics, checks, tolerances: tol })
}

/// Solves per `config` and writes the run directory; returns the report.
pub fn solve_to_dir(config: &SolveConfig, dir: &Path) -> Result<RunReport> {
    let m0 = read_input(&config.m0)?;
    let m1 = read_input(&config.m1)?;
    if m0.space != m1.space {
        return Err(Error::Shape("m0 and m1 live on different grids".into()));
    }
    let s = m0.space;
    let grid = GridSpec::new(s.d, config.nt, s.nx, s.r)?;
    let start = std::time::Instant::now();
    let solution = solve_planning(&config.model, grid, &m0, &m1, &config.solver)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(dir)?;
    write_run_fields(dir, &solution)?;
    // the report is computed exactly as `diagnose` will recompute it
    let stored = Solution::from_fields(
        solution.m.clone(),
        solution.w.clone(),
        solution.dual.clone(),
        config.solver.density_floor,
    )?;
    let report = report_for(&config.model, &stored, config.tolerances)?;
    write_json(&dir.join("report.json"), &report)?;
    write_json(&dir.join("config.json"), config)?;
    write_json(&dir.join("model.json"), &config.model)?;
    write_json(
        &dir.join("solver.json"),
        &SolverSummary {
            iterations: solution.iterations,
            converged: solution.converged,
            tau_primal: solution.tau_primal,
            tau_dual: solution.tau_dual,
            operator_norm: solution.operator_norm,
            wall_seconds,
        },
    )?;
    write_history(&dir.join("history.csv"), &solution)?;
    let mut outputs = vec![
        "m.bin", "m.bin.json", "w.bin", "w.bin.json", "u.bin", "u.bin.json", "alpha.bin",
        "alpha.bin.json", "traces.bin", "traces.bin.json", "report.json", "config.json",
        "model.json", "history.csv",
    ];
    if s.d == 1 {
        write_slices_csv(&dir.join("slices.csv"), &solution)?;
        outputs.push("slices.csv");
    }
    write_manifest(dir, "solve", config, Vec::new(), &[&config.m0, &config.m1], &outputs)?;
    Ok(report)
}

fn write_run_fields(dir: &Path, solution: &Solution) -> Result<()> {
    let grid = solution.grid;
    write_density(&dir.join("m.bin"), &solution.m)?;
    write_momentum(&dir.join("w.bin"), &solution.w)?;
    write_scalar(&dir.join("u.bin"), &solution.dual.u)?;
    write_scalar(&dir.join("alpha.bin"), &solution.dual.alpha)?;
    // the two traces as a two-slice scalar field
    let tgrid = GridSpec::new(grid.d, 2, grid.nx, grid.r)?;
    let mut traces = ScalarField::zeros(tgrid);
    traces.slice_mut(0).copy_from_slice(&solution.dual.trace0);
    traces.slice_mut(1).copy_from_slice(&solution.dual.trace1);
    write_scalar(&dir.join("traces.bin"), &traces)
}

fn write_history(path: &Path, solution: &Solution) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "iter,primal,dual,gap,rel_gap,primal_residual,dual_residual")?;
    for e in &solution.history {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            e.iter, e.primal, e.dual, e.gap, e.rel_gap, e.primal_residual, e.dual_residual
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_slices_csv(path: &Path, solution: &Solution) -> Result<()> {
    let nt = solution.grid.nt;
    let ks: Vec<usize> = [0, nt / 4, nt / 2, 3 * nt / 4, nt].into_iter().collect();
    let names: Vec<String> = ks.iter().map(|k| format!("m_t{:.4}", *k as f64 / nt as f64)).collect();
    let cols: Vec<(&str, &[f64])> = ks.iter().zip(&names).map(|(k, n)| (n.as_str(), solution.m.slice(*k))).collect();
    write_csv_1d(path, &solution.grid.space(), &cols)
}

/// Reads the fields, model and configuration of a run directory.
pub fn load_run(dir: &Path) -> Result<(SolveConfig, Solution)> {
    let config: SolveConfig = read_json(&dir.join("config.json"))?;
    let m = read_density(&dir.join("m.bin"))?;
    let w = read_momentum(&dir.join("w.bin"))?;
    let u = read_scalar(&dir.join("u.bin"))?;
    let alpha = read_scalar(&dir.join("alpha.bin"))?;
    let traces = read_scalar(&dir.join("traces.bin"))?;
    if traces.grid.nt != 2 || traces.grid.space() != m.grid.space() {
        return Err(Error::Shape("traces.bin does not match the run grid".into()));
    }
    let mut dual = DualPair::from_fields(u, alpha)?;
    dual.trace0 = traces.slice(0).to_vec();
    dual.trace1 = traces.slice(1).to_vec();
    let solution = Solution::from_fields(m, w, dual, config.solver.density_floor)?;
    Ok((config, solution))
}

fn run_solve(cli: &Cli, args: &SolveArgs) -> Result<serde_json::Value> {
    let config = match &args.config {
        Some(path) => {
            let mut c: SolveConfig = read_json(path)?;
            c.tolerances = c.tolerances.with_flags(cli);
            c.solver.stop_gap = c.tolerances.gap;
            c.solver.stop_residual = c.tolerances.residual;
            c
        }
        None => {
            let tol = Tolerances::default().with_flags(cli);
            SolveConfig {
                m0: args.m0.clone().expect("required by clap"),
                m1: args.m1.clone().expect("required by clap"),
                nt: args.solver.nt,
                model: args.model.resolve()?,
                solver: args.solver.config(&tol),
                tolerances: tol,
            }
        }
    };
    let dir = out_dir(cli)?;
    let report = solve_to_dir(&config, &dir)?;
    Ok(brief(&dir, &report))
}

fn brief(dir: &Path, report: &RunReport) -> serde_json::Value {
    let d = &report.diagnostics;
    serde_json::json!({
        "run": dir,
        "B": d.b,
        "A": d.a,
        "rel_gap": d.rel_gap,
        "hj_violation_support": d.hj_violation_support,
        "checks": report.checks,
    })
}

fn run_diagnose(cli: &Cli, args: &DiagnoseArgs) -> Result<serde_json::Value> {
    let (config, solution) = load_run(&args.run)?;
    let tol = config.tolerances.with_flags(cli);
    let report = report_for(&config.model, &solution, tol)?;
    let dir = cli.out.clone().unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(brief(&dir, &report))
}

#[derive(Serialize)]
struct KlConfig<'a> {
    m0: &'a Path,
    m1: &'a Path,
    p: f64,
    a_grid: &'a [f64],
    refine: bool,
    nt: usize,
    solver: SolverConfig,
}

fn run_kl(cli: &Cli, args: &KlArgs) -> Result<serde_json::Value> {
    let m0 = read_input(&args.m0)?;
    let m1 = read_input(&args.m1)?;
    if m0.space != m1.space {
        return Err(Error::Shape("m0 and m1 live on different grids".into()));
    }
    let s = m0.space;
    let grid = GridSpec::new(s.d, args.solver.nt, s.nx, s.r)?;
    let tol = Tolerances::default().with_flags(cli);
    let solver = args.solver.config(&tol);
    let report = kl_distance(&m0, &m1, args.p, &args.a_grid, args.refine, grid, &solver)?;
    let dir = out_dir(cli)?;
    write_json(&dir.join("kl.json"), &report)?;
    let config = KlConfig {
        m0: &args.m0,
        m1: &args.m1,
        p: args.p,
        a_grid: &args.a_grid,
        refine: args.refine,
        nt: args.solver.nt,
        solver,
    };
    write_manifest(&dir, "kl", &config, Vec::new(), &[&args.m0, &args.m1], &["kl.json"])?;
    Ok(serde_json::to_value(report)?)
}

/// `id, t, x[, y], cost_so_far` rows for every node of every path.
pub fn write_paths_csv(path: &Path, d: usize, paths: &[Trajectory]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    if d == 1 {
        writeln!(out, "id,t,x,cost_so_far")?;
    } else {
        writeln!(out, "id,t,x,y,cost_so_far")?;
    }
    for p in paths {
        for ((t, x), c) in p.times.iter().zip(&p.positions).zip(&p.cost_so_far) {
            if d == 1 {
                writeln!(out, "{},{:e},{:e},{:e}", p.id, t, x[0], c)?;
            } else {
                writeln!(out, "{},{:e},{:e},{:e},{:e}", p.id, t, x[0], x[1], c)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn run_trace(cli: &Cli, args: &TraceArgs) -> Result<serde_json::Value> {
    let (config, solution) = load_run(&args.run)?;
    let model = &config.model;
    let grid = solution.grid;
    let steps = args.steps.unwrap_or_else(|| default_steps(grid));
    let starts = sample_particles(&solution.m0(), args.n, args.seed)?;
    let paths = trace_ensemble(model, &solution, &starts, steps)?;
    let summary = TraceSummary {
        n: args.n,
        seed: args.seed,
        steps,
        superposition: superposition_report(&solution, &paths)?,
        optimality: path_optimality_check(model, &solution, &paths, args.seed)?,
        plan: transport_plan_summary(&paths, &grid.space(), args.bins)?,
    };
    // `--out paths.csv` names the file; any other value is a directory
    let (dir, csv_name) = match &cli.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => (
            p.parent().filter(|q| !q.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            p.file_name().expect("csv path has a file name").to_string_lossy().into_owned(),
        ),
        _ => (out_dir(cli)?, "paths.csv".to_string()),
    };
    fs::create_dir_all(&dir)?;
    write_paths_csv(&dir.join(&csv_name), grid.d, &paths)?;
    write_json(&dir.join("summary.json"), &summary)?;
    #[derive(Serialize)]
    struct TraceConfig<'a> {
        run: &'a Path,
        n: usize,
        seed: u64,
        steps: usize,
        bins: usize,
    }
    let cfg = TraceConfig { run: &args.run, n: args.n, seed: args.seed, steps, bins: args.bins };
    let inputs = ["m.bin", "w.bin", "u.bin", "alpha.bin", "traces.bin", "config.json"].map(|f| args.run.join(f));
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&dir, "trace", &cfg, vec![args.seed], &input_refs, &[&csv_name, "summary.json"])?;
    Ok(serde_json::json!({
        "paths": dir.join(&csv_name),
        "endpoint_discrepancy": summary.superposition.endpoint_discrepancy(),
        "median_abs_residual": summary.optimality.median_abs_residual,
        "perturbation_pass_fraction": summary.optimality.perturbation_pass_fraction,
    }))
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new().parse_filters(level).format_timestamp(None).try_init();
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Runs a parsed command; the returned JSON is printed on success.
pub fn execute(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Gen(a) => run_gen(cli, a),
        Command::Solve(a) => run_solve(cli, a),
        Command::Kl(a) => run_kl(cli, a),
        Command::Diagnose(a) => run_diagnose(cli, a),
        Command::Trace(a) => run_trace(cli, a),
    }
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", &e.to_string()));
            return 2;
        }
    };
    init_logging(&cli.log_level);
    let result = init_threads(cli.threads).and_then(|_| execute(&cli));
    match result {
        Ok(value) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            1
        }
    }
}
