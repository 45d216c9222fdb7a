//! Command-line runner: single simulations, beta sweeps, post-hoc analysis of
//! a run directory, perceptron maximizers and parameter sampling.
//!
//! Exit codes: 0 converged (or success), 1 invalid input or I/O failure,
//! 2 step budget exhausted.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{hessian_d2, sopd_check, total_energy, Normalization, SopdResult};
use crate::clusters::{self, BoundDiagnostics, ClusterReport};
use crate::dynamics::{self, DynamicsConfig, Mode, RunOutcome, Termination};
use crate::error::{Error, Result};
use crate::extrema::{self, MaxReport, SymmetryReport};
use crate::perceptron::{ActivationKind, PerceptronParams};
use crate::spectral::{self, SpectralReport};
use crate::sphere::Ensemble;

pub const OUTPUT_ENV: &str = "AML_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "runs";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;

/// Merge distance for coincident atoms before the Hessian is assembled.
pub const MERGE_TOL: f64 = 1e-9;
pub const SOPD_TOL: f64 = 1e-6;
pub const SYMMETRY_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    UniformSeeded,
}

/// Perceptron given by file path or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerceptronSource {
    Path(PathBuf),
    Inline(PerceptronParams),
}

impl PerceptronSource {
    pub fn load(&self) -> Result<PerceptronParams> {
        match self {
            Self::Path(p) => PerceptronParams::load_json(p),
            Self::Inline(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

fn default_beta() -> f64 {
    1.0
}
fn default_mode() -> Mode {
    Mode::Descent
}
fn default_norm() -> Normalization {
    Normalization::Unnormalized
}
fn default_d() -> usize {
    2
}
fn default_n() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_norm")]
    pub normalization: Normalization,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::max_steps")]
    pub max_steps: u64,
    #[serde(default = "defaults::snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default = "defaults::window")]
    pub window: usize,
    #[serde(default = "defaults::speed_tol")]
    pub speed_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::store_positions_every")]
    pub store_positions_every: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(rename = "N", alias = "n", default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub perceptron: Option<PerceptronSource>,
    #[serde(default)]
    pub beta_list: Vec<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

mod defaults {
    use crate::dynamics::DynamicsConfig;
    use crate::attention::Normalization;
    use crate::dynamics::Mode;

    fn base() -> DynamicsConfig {
        DynamicsConfig::new(1.0, Mode::Descent, Normalization::Unnormalized)
    }
    pub fn dt() -> f64 {
        base().dt
    }
    pub fn max_steps() -> u64 {
        base().max_steps
    }
    pub fn snapshot_every() -> u64 {
        base().snapshot_every
    }
    pub fn window() -> usize {
        base().window
    }
    pub fn speed_tol() -> f64 {
        base().speed_tol
    }
    pub fn store_positions_every() -> usize {
        base().store_positions_every
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn dynamics(&self, beta: f64) -> DynamicsConfig {
        DynamicsConfig {
            beta,
            mode: self.mode,
            normalization: self.normalization,
            dt: self.dt,
            max_steps: self.max_steps,
            snapshot_every: self.snapshot_every,
            window: self.window,
            speed_tol: self.speed_tol,
            seed: self.seed,
            store_positions_every: self.store_positions_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics(self.beta).validate()?;
        if self.n == 0 {
            return Err(Error::InvalidInput("N must be at least 1".into()));
        }
        if self.d < 2 {
            return Err(Error::InvalidInput(format!("d must be at least 2, got {}", self.d)));
        }
        for &b in &self.beta_list {
            crate::attention::check_beta(b)?;
        }
        if let Some(p) = &self.perceptron {
            let p = p.load()?;
            if p.dim() != self.d {
                return Err(Error::DimensionMismatch { expected: self.d, got: p.dim() });
            }
        }
        Ok(())
    }

    /// Flag > config file > `AML_OUTPUT_DIR` > `runs`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }
}

#[derive(Debug, Parser)]
#[command(name = "aml", version, about = "Attention + perceptron particle dynamics on the sphere")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation.
    Simulate(RunArgs),
    /// Run one simulation per beta in the list.
    Sweep(SweepArgs),
    /// Post-hoc checks on a finished run directory.
    Analyze(AnalyzeArgs),
    /// Global maximizers of the perceptron potential.
    Extrema(ExtremaArgs),
    /// Sample perceptron weights i.i.d. standard normal.
    GenTheta(GenThetaArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub normalization: Option<Normalization>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub snapshot_every: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub speed_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub store_positions_every: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(short = 'n', long = "n")]
    pub n: Option<usize>,
    /// Perceptron JSON file.
    #[arg(long)]
    pub perceptron: Option<PathBuf>,
    /// Run without a perceptron even if the config names one.
    #[arg(long, conflicts_with = "perceptron")]
    pub no_perceptron: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated beta list.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    pub run_dir: PathBuf,
    /// Subset of hessian,bounds,spectrum,extrema.
    #[arg(long, value_delimiter = ',', default_value = "hessian,bounds,spectrum,extrema")]
    pub checks: Vec<Check>,
    /// Highest Fourier index for the spectrum check.
    #[arg(long, default_value_t = 20)]
    pub n_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Hessian,
    Bounds,
    Spectrum,
    Extrema,
}

#[derive(Debug, Clone, Args)]
pub struct ExtremaArgs {
    #[arg(long)]
    pub perceptron: PathBuf,
    /// Also report the energy of the maximizing Dirac at this beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Output JSON (default: <output dir>/extrema.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenThetaArgs {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub neurons: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "relu")]
    pub activation: ActivationKind,
    /// Output JSON (default: <output dir>/theta.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        over!(beta, mode, normalization, dt, max_steps, snapshot_every, window, speed_tol, seed, store_positions_every, d, n);
        if let Some(p) = &self.perceptron {
            c.perceptron = Some(PerceptronSource::Path(p.clone()));
        }
        if self.no_perceptron {
            c.perceptron = None;
        }
        if let Some(o) = &self.output_dir {
            c.output_dir = Some(o.clone());
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub termination: Termination,
    pub steps: u64,
    pub final_max_speed: f64,
    pub final_energy: f64,
    pub n_clusters: usize,
    pub largest_mass: f64,
    pub clusters: ClusterReport,
}

impl RunSummary {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let p = run_dir.join(SUMMARY_FILE);
        if !p.exists() {
            return Err(Error::MissingArtifact(p.display().to_string()));
        }
        Ok(serde_json::from_reader(File::open(p)?)?)
    }
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const FINAL_FILE: &str = "final.csv";
pub const THETA_FILE: &str = "theta.json";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const MASSES_FILE: &str = "masses.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn write_trajectory(path: &Path, out: &RunOutcome) -> Result<()> {
    let d = out.final_ensemble.dim();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    let mut header = vec!["step".to_string(), "atom".into(), "mass".into()];
    if d == 2 {
        header.push("theta".into());
    } else {
        header.extend((0..d).map(|i| format!("x{i}")));
    }
    w.write_record(&header)?;
    for snap in &out.trajectory.snapshots {
        let Some(ens) = &snap.ensemble else { continue };
        let angles = (d == 2).then(|| ens.angles());
        for (i, (x, m)) in ens.positions().iter().zip(ens.masses()).enumerate() {
            let mut rec = vec![snap.step.to_string(), i.to_string(), m.to_string()];
            match &angles {
                Some(a) => rec.push(a[i].to_string()),
                None => rec.extend(x.coords().iter().map(|c| c.to_string())),
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_snapshots(path: &Path, out: &RunOutcome) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["step", "energy", "max_speed", "n_clusters"])?;
    for s in &out.trajectory.snapshots {
        w.write_record([s.step.to_string(), s.energy.to_string(), s.max_speed.to_string(), s.n_clusters.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one simulation at `beta` and writes its artifacts into `dir`.
pub fn run_experiment(config: &ExperimentConfig, beta: f64, dir: &Path) -> Result<RunSummary> {
    let mut echo = config.clone();
    echo.beta = beta;
    echo.validate()?;
    let params = config.perceptron.as_ref().map(|p| p.load()).transpose()?;
    let dyn_cfg = config.dynamics(beta);
    let init = match config.init {
        InitKind::UniformSeeded => dynamics::uniform_init(config.d, config.n, config.seed)?,
    };
    let out = dynamics::run(&dyn_cfg, params.as_ref(), &init)?;
    let report = clusters::detect(&out.final_ensemble, beta)?;

    fs::create_dir_all(dir)?;
    write_trajectory(&dir.join(TRAJECTORY_FILE), &out)?;
    write_snapshots(&dir.join(SNAPSHOTS_FILE), &out)?;
    out.final_ensemble.save_csv(&dir.join(FINAL_FILE))?;
    write_json(&dir.join(CLUSTERS_FILE), &report)?;
    if let Some(p) = &params {
        p.save_json(&dir.join(THETA_FILE))?;
    }
    let summary = RunSummary {
        config: echo,
        termination: out.termination,
        steps: out.steps,
        final_max_speed: out.final_max_speed,
        final_energy: out.final_energy,
        n_clusters: report.len(),
        largest_mass: report.largest_mass(),
        clusters: report,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn exit_for(t: Termination) -> i32 {
    match t {
        Termination::Converged => EXIT_OK,
        Termination::StepBudget => EXIT_BUDGET,
    }
}

pub fn cmd_simulate(args: &RunArgs) -> Result<i32> {
    let config = args.resolve()?;
    config.validate()?;
    let dir = config.resolved_output_dir();
    let s = run_experiment(&config, config.beta, &dir)?;
    println!(
        "{:?} after {} steps: {} clusters, largest mass {:.6}, energy {:.10e}, max speed {:.3e} -> {}",
        s.termination,
        s.steps,
        s.n_clusters,
        s.largest_mass,
        s.final_energy,
        s.final_max_speed,
        dir.display()
    );
    Ok(exit_for(s.termination))
}

/// Subdirectory name for one sweep point.
pub fn beta_dir_name(beta: f64) -> String {
    format!("beta_{beta}")
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let mut config = args.run.resolve()?;
    if let Some(b) = &args.betas {
        config.beta_list = b.clone();
    }
    if config.beta_list.is_empty() {
        return Err(Error::InvalidInput("sweep needs a nonempty beta_list (config or --betas)".into()));
    }
    config.validate()?;
    let root = config.resolved_output_dir();
    fs::create_dir_all(&root)?;
    let params = config.perceptron.as_ref().map(|p| p.load()).transpose()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| Error::InvalidInput(e.to_string()))?;
    let results: Vec<Result<RunSummary>> = pool.install(|| {
        config
            .beta_list
            .par_iter()
            .map(|&b| run_experiment(&config, b, &root.join(beta_dir_name(b))))
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_sweep_tables(&root, &summaries, params.as_ref())?;

    let mut code = EXIT_OK;
    for s in &summaries {
        println!(
            "beta {:>8}: {:?}, {} clusters, largest mass {:.6}",
            s.config.beta, s.termination, s.n_clusters, s.largest_mass
        );
        code = code.max(exit_for(s.termination));
    }
    println!("sweep tables -> {}", root.display());
    Ok(code)
}

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::StepBudget => "step_budget",
    }
}

/// `sweep.csv` plus the per-cluster `masses.csv` with both bound lines.
pub fn write_sweep_tables(root: &Path, runs: &[RunSummary], params: Option<&PerceptronParams>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(root.join(SWEEP_FILE))?;
    w.write_record(["beta", "sqrt_beta", "n_clusters", "largest_mass", "energy_final", "terminated"])?;
    for s in runs {
        let b = s.config.beta;
        w.write_record([
            b.to_string(),
            b.sqrt().to_string(),
            s.n_clusters.to_string(),
            s.largest_mass.to_string(),
            s.final_energy.to_string(),
            termination_label(s.termination).to_string(),
        ])?;
    }
    w.flush()?;

    let c = params.map_or(0.0, clusters::c_theta);
    let limit = clusters::mass_bound_limit(0.5);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(root.join(MASSES_FILE))?;
    w.write_record(["beta", "sqrt_beta", "cluster", "mass", "diameter", "bound_scale", "limit_bound", "finite_bound"])?;
    for s in runs {
        let b = s.config.beta;
        let finite = clusters::mass_bound(b, 0.5, c)?;
        for (k, cl) in s.clusters.clusters.iter().enumerate() {
            w.write_record([
                b.to_string(),
                b.sqrt().to_string(),
                k.to_string(),
                cl.mass.to_string(),
                cl.diameter.to_string(),
                (cl.diameter <= clusters::bound_scale(b)).to_string(),
                limit.to_string(),
                finite.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianCheck {
    pub pass: bool,
    pub converged: bool,
    pub merged_atoms: usize,
    pub kink_atoms: Vec<usize>,
    pub tol: f64,
    pub sopd: SopdResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsCheck {
    pub pass: bool,
    pub diagnostics: BoundDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumCheck {
    pub pass: bool,
    pub tol: f64,
    pub report: SpectralReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremaCheck {
    pub pass: bool,
    pub max_energy: f64,
    pub final_energy: f64,
    pub report: MaxReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<SymmetryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome<T> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl<T> CheckOutcome<T> {
    fn from_result(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Self { result: Some(v), skipped: None }),
            Err(Error::Inapplicable(why)) => Ok(Self { result: None, skipped: Some(why) }),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Analysis {
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian: Option<CheckOutcome<HessianCheck>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<CheckOutcome<BoundsCheck>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<CheckOutcome<SpectrumCheck>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrema: Option<CheckOutcome<ExtremaCheck>>,
}

/// Funk-Hecke residual tolerance; above beta ~ 14 the kernel sum itself
/// carries roundoff of order `e^beta * 1e-16`.
pub fn spectrum_tolerance(beta: f64) -> f64 {
    1e-8 * (1e-6 * beta.exp()).max(1.0)
}

pub fn check_hessian(ens: &Ensemble, beta: f64, params: Option<&PerceptronParams>, converged: bool) -> Result<HessianCheck> {
    let (merged, _) = ens.merge_coincident(MERGE_TOL);
    let h = hessian_d2(&merged, beta, params)?;
    let sopd = sopd_check(&h, SOPD_TOL);
    Ok(HessianCheck {
        pass: sopd.pass,
        converged,
        merged_atoms: merged.len(),
        kink_atoms: h.kink_atoms.clone(),
        tol: SOPD_TOL,
        sopd,
    })
}

pub fn analyze_run(run_dir: &Path, checks: &[Check], n_max: usize) -> Result<Analysis> {
    let summary = RunSummary::load(run_dir)?;
    let final_path = run_dir.join(FINAL_FILE);
    if !final_path.exists() {
        return Err(Error::MissingArtifact(final_path.display().to_string()));
    }
    let ens = Ensemble::load_csv(&final_path)?;
    let theta_path = run_dir.join(THETA_FILE);
    let params = if theta_path.exists() { Some(PerceptronParams::load_json(&theta_path)?) } else { None };
    let beta = summary.config.beta;
    let converged = summary.termination == Termination::Converged;

    let mut a = Analysis { beta, ..Default::default() };
    if checks.contains(&Check::Hessian) {
        a.hessian = Some(CheckOutcome::from_result(check_hessian(&ens, beta, params.as_ref(), converged))?);
    }
    if checks.contains(&Check::Bounds) {
        let r = (|| {
            let report = clusters::detect(&ens, beta)?;
            let diagnostics = clusters::verify_bounds(&report, &ens, beta, params.as_ref(), None)?;
            Ok(BoundsCheck { pass: diagnostics.all_within_bound, diagnostics })
        })();
        a.bounds = Some(CheckOutcome::from_result(r)?);
    }
    if checks.contains(&Check::Spectrum) {
        let r = spectral::spectral_report(&ens, beta, n_max).map(|report| {
            let tol = spectrum_tolerance(beta);
            SpectrumCheck { pass: report.residual_max <= tol, tol, report }
        });
        a.spectrum = Some(CheckOutcome::from_result(r)?);
    }
    if checks.contains(&Check::Extrema) {
        let r = match &params {
            None => Err(Error::Inapplicable("run has no perceptron".into())),
            Some(p) => extrema::global_max(p).and_then(|report| {
                let max_energy = report.max_energy(beta);
                let final_energy = total_energy(&ens, beta, Some(p))?;
                let symmetry = if ens.dim() == 3 && summary.config.mode == Mode::Descent {
                    extrema::minimizer_symmetry_check(&ens, p, SYMMETRY_TOL).ok()
                } else {
                    None
                };
                Ok(ExtremaCheck {
                    pass: final_energy <= max_energy + 1e-9 * max_energy.abs().max(1.0),
                    max_energy,
                    final_energy,
                    report,
                    symmetry,
                })
            }),
        };
        a.extrema = Some(CheckOutcome::from_result(r)?);
    }
    write_json(&run_dir.join(ANALYSIS_FILE), &a)?;
    Ok(a)
}

fn status<T>(o: &Option<CheckOutcome<T>>, pass: impl Fn(&T) -> bool) -> Option<String> {
    o.as_ref().map(|c| match (&c.result, &c.skipped) {
        (Some(r), _) => if pass(r) { "pass".into() } else { "FAIL".into() },
        (None, Some(why)) => format!("skipped ({why})"),
        _ => "skipped".into(),
    })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let a = analyze_run(&args.run_dir, &args.checks, args.n_max)?;
    for (name, s) in [
        ("hessian", status(&a.hessian, |r| r.pass)),
        ("bounds", status(&a.bounds, |r| r.pass)),
        ("spectrum", status(&a.spectrum, |r| r.pass)),
        ("extrema", status(&a.extrema, |r| r.pass)),
    ] {
        if let Some(s) = s {
            println!("{name:<9} {s}");
        }
    }
    println!("analysis -> {}", args.run_dir.join(ANALYSIS_FILE).display());
    Ok(EXIT_OK)
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

pub fn cmd_extrema(args: &ExtremaArgs) -> Result<i32> {
    let params = PerceptronParams::load_json(&args.perceptron)?;
    let report = extrema::global_max(&params)?;
    if !report.per_cell.is_empty() {
        println!("{:<4} {:<24} {:>16}  argmax", "cell", "active set", "max value");
        for (k, c) in report.per_cell.iter().enumerate() {
            let active = format!("{:?}", c.cell.active_set);
            let arg = c.argmax.first().map(|u| format!("{:.6?}", u.coords())).unwrap_or_default();
            println!("{k:<4} {active:<24} {:>16.10}  {arg}", c.value);
        }
    }
    println!("max value {:.12} at {} point(s){}", report.value, report.maximizers.len(), if report.continuum_suspected { " (continuum suspected)" } else { "" });
    if let Some(b) = args.beta {
        crate::attention::check_beta(b)?;
        println!("max energy at beta {b}: {:.12e}", report.max_energy(b));
    }
    let out = args.out.clone().unwrap_or_else(|| output_root().join("extrema.json"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_json(&out, &report)?;
    Ok(EXIT_OK)
}

pub fn cmd_gen_theta(args: &GenThetaArgs) -> Result<i32> {
    if args.d < 2 || args.neurons == 0 {
        return Err(Error::InvalidInput("need d >= 2 and at least one neuron".into()));
    }
    let p = PerceptronParams::sample_standard_normal(args.activation, args.d, args.neurons, args.seed);
    let out = args.out.clone().unwrap_or_else(|| output_root().join(THETA_FILE));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    p.save_json(&out)?;
    println!("{}", out.display());
    Ok(EXIT_OK)
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Extrema(a) => cmd_extrema(a),
        Command::GenTheta(a) => cmd_gen_theta(a),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
