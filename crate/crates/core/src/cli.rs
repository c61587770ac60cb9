//! Command-line front end: run configuration, task dispatch and exit codes.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical or I/O failure, 4 a
//! negative verdict when `--expect-contractive` is set.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exponents::{check_positive_invariance, default_horizons, estimate_bold_sigma_d, first_method_verdict};
use crate::floquet::{orbital_analysis, scan_orbit_roots, OrbitalOptions, OrbitalVerdict, PeriodicMetric};
use crate::flow::{find_periodic_orbit, integrate, DynamicalSystem, IntegratorOptions};
use crate::linalg::{FractionalDimension, SpdMatrix};
use crate::metric::{evaluate_second_method, kcompound_check, MetricField, SecondMethodOptions};
use crate::region::Region;
use crate::report::{write_companions, write_report, CsvTable, Format, Report};
use crate::synthesis::{minimize_fractional_s, synthesize_fixed_d, MetricFamily, SynthesisOptions};
use crate::systems::{
    harmonic_oscillator, langford_field, rigid_body_system, rossler_reference_metric, rossler_system, LangfordParams,
    Potential, RigidBodyParams, RosslerParams,
};
use crate::certificate::{Verdict, DEFAULT_MARGIN};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERDICT: i32 = 4;

const RIGID_BODY_FIXTURE: &str = include_str!("../../../fixtures/rigid_body.json");
const ROSSLER_FIXTURE: &str = include_str!("../../../fixtures/rossler.json");
const LANGFORD_FIXTURE: &str = include_str!("../../../fixtures/langford.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Simulate,
    Exponents,
    Certify,
    Synthesize,
    Floquet,
    Kcompound,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Exponents => "exponents",
            Task::Certify => "certify",
            Task::Synthesize => "synthesize",
            Task::Floquet => "floquet",
            Task::Kcompound => "kcompound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSpec {
    #[serde(rename_all = "camelCase")]
    RigidBody {
        j1: f64,
        j2: f64,
        j3: f64,
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau: Option<f64>,
        /// Torque as a multiple of the threshold; used when `tau` is absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_factor: Option<f64>,
    },
    Rossler {
        a: f64,
        b: f64,
    },
    Langford {
        a: f64,
    },
    /// `ẋ = Ax`, rows of `A`.
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    Harmonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegionSpec {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        counts: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
    },
    Point {
        x: Vec<f64>,
    },
    /// Rigid body: lattice inside `W ≤ β/δ`, `β = betaFactor·β⋆`.
    #[serde(rename_all = "camelCase")]
    Trapping {
        #[serde(default = "default_beta_factor")]
        beta_factor: f64,
        counts: usize,
    },
    /// Rössler: the line `x = z = 0`, `|y| ≤ yMax`.
    #[serde(rename_all = "camelCase")]
    YSlice {
        y_max: f64,
        step: f64,
    },
    /// Samples around the periodic orbit.
    Tube {
        radius: f64,
        rings: usize,
    },
}

fn default_beta_factor() -> f64 {
    1.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricSpec {
    Identity,
    Constant {
        p: Vec<Vec<f64>>,
    },
    /// `P₀·e^{γv}` with the system's potential `v`.
    Exponential {
        p0: Vec<Vec<f64>>,
        gamma: f64,
    },
    RosslerReference,
    /// Rigid body: closed-form `P₀` with `e^{γW}`.
    RigidBodyAnalytic {
        gamma: f64,
    },
    /// Metric constructed from the periodic orbit.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    /// Search grid for synthesis; `region` then serves as verification grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis_region: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Integer part for the fractional search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default)]
    pub check_invariance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub expect_contractive: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::input(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoSystem {
    RigidBody,
    Rossler,
    Langford,
}

impl DemoSystem {
    pub fn fixture(self) -> &'static str {
        match self {
            DemoSystem::RigidBody => RIGID_BODY_FIXTURE,
            DemoSystem::Rossler => ROSSLER_FIXTURE,
            DemoSystem::Langford => LANGFORD_FIXTURE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

/// Flag overrides shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dimension d.
    #[arg(long)]
    d: Option<f64>,
    /// Largest horizon; replaces the horizon list.
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Grid density: an integer sets points per axis, a decimal sets the step.
    #[arg(long)]
    grid: Option<String>,
    /// Output path; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// First RNG seed; seeds become consecutive from here.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Exit with code 4 unless the verdict is positive.
    #[arg(long)]
    expect_contractive: bool,
    /// Parameter `a` of the Rössler or Langford system.
    #[arg(long)]
    a: Option<f64>,
    /// Compound order for `kcompound`.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "contracta", version, about = "Certify uniform d-contraction of autonomous ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a trajectory.
    Simulate(Overrides),
    /// Finite-time Lyapunov exponents and the first-method verdict.
    Exponents(Overrides),
    /// Second-method certificate for a given metric.
    Certify(Overrides),
    /// Search for a metric.
    Synthesize(Overrides),
    /// Orbital stability of a periodic orbit.
    Floquet(Overrides),
    /// Log-norm test on additive compounds.
    Kcompound(Overrides),
    /// Run a shipped fixture.
    Demo {
        #[arg(value_enum)]
        system: DemoSystem,
        #[arg(long, value_enum)]
        task: Option<Task>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Parses and runs; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_input() {
        EXIT_INPUT
    } else {
        EXIT_NUMERIC
    }
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("CONTRACTA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second initialization (e.g. in tests) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let (config, ov) = match cli.command {
        Command::Demo { system, task, overrides } => {
            let mut cfg = RunConfig::from_json(system.fixture())?;
            if let Some(t) = task {
                cfg.task = t;
            }
            (cfg, overrides)
        }
        Command::Simulate(o) => (load_for(Task::Simulate, &o)?, o),
        Command::Exponents(o) => (load_for(Task::Exponents, &o)?, o),
        Command::Certify(o) => (load_for(Task::Certify, &o)?, o),
        Command::Synthesize(o) => (load_for(Task::Synthesize, &o)?, o),
        Command::Floquet(o) => (load_for(Task::Floquet, &o)?, o),
        Command::Kcompound(o) => (load_for(Task::Kcompound, &o)?, o),
    };
    let config = apply_overrides(config, &ov)?;
    let outcome = run_task(&config)?;
    let report = Report::new(config.task.name(), &config, &outcome.results, config.seeds.clone())?
        .with_warnings(outcome.warnings.clone());
    match &config.out {
        Some(path) => {
            write_report(&report, path, config.format, outcome.csv.as_deref())?;
            write_companions(path, &outcome.companions)?;
            eprintln!("{} -> {}", outcome.summary, path.display());
        }
        None => match config.format {
            Format::Json => print!("{}", report.to_json()?),
            Format::Csv => print!(
                "{}",
                outcome
                    .csv
                    .as_deref()
                    .ok_or_else(|| Error::input(format!("task '{}' has no CSV form", config.task.name())))?
            ),
        },
    }
    if config.expect_contractive && outcome.positive == Some(false) {
        eprintln!("verdict is not contractive");
        return Ok(EXIT_VERDICT);
    }
    Ok(EXIT_OK)
}

fn load_for(task: Task, o: &Overrides) -> Result<RunConfig> {
    let path = o
        .config
        .as_ref()
        .ok_or_else(|| Error::input("--config is required (or use `demo`)"))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.task = task;
    Ok(cfg)
}

/// Applies flag overrides; the result is what the report echoes.
pub fn apply_overrides(mut cfg: RunConfig, o: &Overrides) -> Result<RunConfig> {
    if let Some(d) = o.d {
        cfg.d = Some(d);
    }
    if let Some(t) = o.t_max {
        cfg.t_max = Some(t);
        cfg.horizons = None;
    }
    if let Some(g) = &o.grid {
        let spec = cfg
            .region
            .take()
            .ok_or_else(|| Error::input("--grid needs a region in the configuration"))?;
        cfg.region = Some(regrid(spec, g)?);
    }
    if let Some(out) = &o.out {
        cfg.out = Some(out.clone());
    }
    if let Some(s) = o.seed {
        let len = cfg.seeds.len().max(1) as u64;
        cfg.seeds = (s..s + len).collect();
    }
    if let Some(f) = o.format {
        cfg.format = match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        };
    }
    if o.expect_contractive {
        cfg.expect_contractive = true;
    }
    if let Some(a) = o.a {
        match &mut cfg.system {
            SystemSpec::Langford { a: v } | SystemSpec::Rossler { a: v, .. } => *v = a,
            _ => return Err(Error::input("--a applies to the Rössler and Langford systems only")),
        }
    }
    if let Some(k) = o.k {
        cfg.k = Some(k);
    }
    Ok(cfg)
}

fn regrid(spec: RegionSpec, g: &str) -> Result<RegionSpec> {
    let count = g.parse::<usize>().ok();
    let step = g.parse::<f64>().ok().filter(|v| *v > 0.0);
    if count.is_none() && step.is_none() {
        return Err(Error::input(format!("--grid expects a count or a positive step, got '{g}'")));
    }
    Ok(match spec {
        RegionSpec::Box { lo, hi, .. } => match count {
            Some(c) => RegionSpec::Box {
                counts: Some(vec![c; lo.len()]),
                lo,
                hi,
                step: None,
            },
            None => RegionSpec::Box { lo, hi, counts: None, step },
        },
        RegionSpec::Trapping { beta_factor, counts } => RegionSpec::Trapping {
            beta_factor,
            counts: count.unwrap_or(counts),
        },
        RegionSpec::YSlice { y_max, .. } => RegionSpec::YSlice {
            y_max,
            step: match count {
                Some(c) if c > 1 => 2.0 * y_max / (c - 1) as f64,
                _ => step.unwrap_or(1.0),
            },
        },
        RegionSpec::Tube { radius, rings } => RegionSpec::Tube {
            radius,
            rings: count.unwrap_or(rings),
        },
        p @ RegionSpec::Point { .. } => p,
    })
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::input("matrix must be square and nonempty"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// A built system with the side data tasks need.
struct Built {
    sys: DynamicalSystem,
    potential: Potential,
    rigid: Option<RigidBodyParams>,
    rossler: Option<RosslerParams>,
    langford: Option<f64>,
    bundle: Value,
}

fn build_system(spec: &SystemSpec) -> Result<Built> {
    Ok(match spec {
        SystemSpec::RigidBody {
            j1,
            j2,
            j3,
            delta,
            tau,
            tau_factor,
        } => {
            let mut p = RigidBodyParams {
                j1: *j1,
                j2: *j2,
                j3: *j3,
                delta: *delta,
                tau: 0.0,
            };
            p.validate()?;
            p.tau = match (tau, tau_factor) {
                (Some(t), _) => *t,
                (None, Some(f)) => f * p.tau_bound(),
                (None, None) => 0.0,
            };
            let (sys, bundle) = rigid_body_system(p)?;
            Built {
                sys,
                potential: p.energy_potential(),
                rigid: Some(p),
                rossler: None,
                langford: None,
                bundle: serde_json::to_value(bundle)?,
            }
        }
        SystemSpec::Rossler { a, b } => {
            let p = RosslerParams { a: *a, b: *b };
            let (sys, bundle) = rossler_system(p)?;
            Built {
                sys,
                potential: p.potential(),
                rigid: None,
                rossler: Some(p),
                langford: None,
                bundle: serde_json::to_value(bundle)?,
            }
        }
        SystemSpec::Langford { a } => {
            let p = LangfordParams { a: *a };
            // the orbit formula needs 1/2 < a < 1; the field itself does not
            let bundle = match crate::systems::langford_system(p) {
                Ok((_, b)) => serde_json::to_value(b)?,
                Err(_) => Value::Null,
            };
            if !a.is_finite() {
                return Err(Error::input("Langford parameter must be finite"));
            }
            Built {
                sys: langford_field(*a),
                potential: Potential::zero(),
                rigid: None,
                rossler: None,
                langford: Some(*a),
                bundle,
            }
        }
        SystemSpec::Linear { matrix } => Built {
            sys: DynamicalSystem::linear("linear", matrix_from_rows(matrix)?)?,
            potential: Potential::zero(),
            rigid: None,
            rossler: None,
            langford: None,
            bundle: Value::Null,
        },
        SystemSpec::Harmonic => Built {
            sys: harmonic_oscillator(),
            potential: Potential::zero(),
            rigid: None,
            rossler: None,
            langford: None,
            bundle: Value::Null,
        },
    })
}

/// Orbit guess from the config, falling back to the Langford closed form.
fn orbit_guess(cfg: &RunConfig, b: &Built) -> Result<(DVector<f64>, f64)> {
    let x0 = match (&cfg.x0, b.langford) {
        (Some(x), _) => DVector::from_vec(x.clone()),
        (None, Some(a)) if a > 0.5 && a < 1.0 => LangfordParams { a }.orbit_point(0.0),
        _ => return Err(Error::input("x0 is required for this system")),
    };
    let t = cfg.period.unwrap_or(if b.langford.is_some() { 2.0 * PI } else { 0.0 });
    if x0.len() != b.sys.dim() {
        return Err(Error::input("x0 length does not match the system"));
    }
    Ok((x0, t))
}

fn periodic_metric(cfg: &RunConfig, b: &Built) -> Result<Arc<PeriodicMetric>> {
    let (x, t) = orbit_guess(cfg, b)?;
    let orbit = find_periodic_orbit(&b.sys, &x, t, &cfg.integrator)?;
    let pm = crate::floquet::construct_periodic_metric(&b.sys, &DVector::from_vec(orbit.x0), orbit.period, &cfg.integrator)?;
    Ok(Arc::new(pm))
}

fn build_region(spec: &RegionSpec, b: &Built, pm: Option<&Arc<PeriodicMetric>>) -> Result<Region> {
    match spec {
        RegionSpec::Box { lo, hi, counts, step } => match (counts, step) {
            (Some(c), _) => Region::new(lo.clone(), hi.clone(), c.clone()),
            (None, Some(s)) => Region::with_step(lo.clone(), hi.clone(), *s),
            (None, None) => Err(Error::input("box region needs counts or step")),
        },
        RegionSpec::Point { x } => Region::point(&DVector::from_vec(x.clone())),
        RegionSpec::Trapping { beta_factor, counts } => {
            let p = b.rigid.ok_or_else(|| Error::input("trapping region needs the rigid body"))?;
            p.trapping_region(p.trapping_level(*beta_factor)?, *counts)
        }
        RegionSpec::YSlice { y_max, step } => {
            let p = b.rossler.ok_or_else(|| Error::input("y-slice region needs the Rössler system"))?;
            p.y_region(*y_max, *step)
        }
        RegionSpec::Tube { radius, rings } => pm
            .ok_or_else(|| Error::input("tube region needs a periodic metric"))?
            .tube_region(*radius, *rings),
    }
}

fn needs_periodic(cfg: &RunConfig) -> bool {
    matches!(cfg.metric, Some(MetricSpec::Periodic)) || matches!(cfg.region, Some(RegionSpec::Tube { .. }))
}

fn build_metric(spec: &MetricSpec, b: &Built, pm: Option<&Arc<PeriodicMetric>>) -> Result<MetricField> {
    let n = b.sys.dim();
    Ok(match spec {
        MetricSpec::Identity => MetricField::identity(n),
        MetricSpec::Constant { p } => MetricField::constant(SpdMatrix::new(matrix_from_rows(p)?)?),
        MetricSpec::Exponential { p0, gamma } => {
            b.potential.exponential_metric(&SpdMatrix::new(matrix_from_rows(p0)?)?, *gamma)
        }
        MetricSpec::RosslerReference => {
            let p = b.rossler.ok_or_else(|| Error::input("reference metric needs the Rössler system"))?;
            rossler_reference_metric().metric(&p)
        }
        MetricSpec::RigidBodyAnalytic { gamma } => {
            let p = b.rigid.ok_or_else(|| Error::input("analytic metric needs the rigid body"))?;
            p.energy_potential().exponential_metric(&p.p0(), *gamma)
        }
        MetricSpec::Periodic => pm
            .ok_or_else(|| Error::input("periodic metric needs an orbit"))?
            .tube_field(),
    })
}

/// Task result before wrapping in a report.
pub struct TaskOutcome {
    pub results: Value,
    pub csv: Option<String>,
    pub companions: Vec<CsvTable>,
    pub warnings: Vec<String>,
    /// Verdict for `--expect-contractive`; `None` when the task has none.
    pub positive: Option<bool>,
    pub summary: String,
}

fn dimension(cfg: &RunConfig, n: usize) -> Result<FractionalDimension> {
    FractionalDimension::new(cfg.d.ok_or_else(|| Error::input("dimension d is required"))?, n)
}

fn region_of(cfg: &RunConfig, b: &Built, pm: Option<&Arc<PeriodicMetric>>) -> Result<Region> {
    build_region(cfg.region.as_ref().ok_or_else(|| Error::input("a region is required"))?, b, pm)
}

/// Runs the configured task.
pub fn run_task(cfg: &RunConfig) -> Result<TaskOutcome> {
    cfg.integrator.validate()?;
    let b = build_system(&cfg.system)?;
    let n = b.sys.dim();
    let margin = cfg.margin.unwrap_or(DEFAULT_MARGIN);
    let pm = if needs_periodic(cfg) && matches!(cfg.task, Task::Certify | Task::Exponents | Task::Kcompound) {
        Some(periodic_metric(cfg, &b)?)
    } else {
        None
    };
    match cfg.task {
        Task::Simulate => {
            let x0 = match &cfg.x0 {
                Some(x) => DVector::from_vec(x.clone()),
                None => orbit_guess(cfg, &b)?.0,
            };
            let t = cfg.t_max.unwrap_or(10.0);
            let tr = integrate(&b.sys, &x0, t, &cfg.integrator)?;
            Ok(TaskOutcome {
                results: json!({
                    "system": b.sys.name(),
                    "bundle": b.bundle,
                    "tEnd": t,
                    "finalState": tr.final_state().iter().copied().collect::<Vec<_>>(),
                    "steps": tr.steps,
                    "samples": tr.times.len(),
                    "errorEstimate": tr.error_estimate,
                }),
                csv: Some(tr.to_csv()),
                companions: vec![],
                warnings: vec![],
                positive: None,
                summary: format!("simulated to t = {t}"),
            })
        }
        Task::Exponents => {
            let region = region_of(cfg, &b, pm.as_ref())?;
            let dim = dimension(cfg, n)?;
            let horizons = match &cfg.horizons {
                Some(h) => h.clone(),
                None => default_horizons(cfg.t_max.unwrap_or(50.0))?,
            };
            let report = estimate_bold_sigma_d(&b.sys, &region, &dim, &horizons, &cfg.integrator)?;
            let cert = first_method_verdict(&report, margin);
            let mut warnings = report.flags.clone();
            if cfg.check_invariance {
                let h = horizons.iter().copied().fold(0.0, f64::max);
                let inv = check_positive_invariance(&b.sys, &region, h, &cfg.integrator)?;
                if !inv.escapes.is_empty() {
                    warnings.push(format!("{} of {} boundary samples left the region by t = {h}", inv.escapes.len(), inv.checked));
                }
            }
            Ok(TaskOutcome {
                csv: Some(report.to_csv()),
                companions: vec![CsvTable {
                    name: "sigma".into(),
                    content: report.horizon_csv(),
                }],
                positive: Some(cert.verdict == Verdict::Contractive),
                summary: format!("boldSigma_{} estimate = {:e} ({:?})", dim.d(), report.bold_sigma_estimate, cert.verdict),
                results: json!({ "bundle": b.bundle, "certificate": cert, "exponents": report }),
                warnings,
            })
        }
        Task::Certify => {
            let region = region_of(cfg, &b, pm.as_ref())?;
            let dim = dimension(cfg, n)?;
            let field = build_metric(cfg.metric.as_ref().unwrap_or(&MetricSpec::Identity), &b, pm.as_ref())?;
            let opts = SecondMethodOptions {
                margin,
                integrator: cfg.integrator,
            };
            let rep = evaluate_second_method(&b.sys, &field, &region, &dim, &opts)?;
            let cert = rep.certificate.clone();
            Ok(TaskOutcome {
                csv: Some(rep.to_csv()),
                companions: vec![CsvTable {
                    name: "roots".into(),
                    content: rep.to_csv(),
                }],
                warnings: vec![],
                positive: Some(cert.verdict == Verdict::Contractive),
                summary: format!("Lambda = {:e} at d = {} ({:?})", cert.bound, dim.d(), cert.verdict),
                results: json!({ "bundle": b.bundle, "certificate": cert }),
            })
        }
        Task::Synthesize => {
            let mut sopts = cfg.synthesis.clone().unwrap_or_default();
            if !cfg.seeds.is_empty() {
                sopts.seeds = cfg.seeds.clone();
            }
            let verify = region_of(cfg, &b, None)?;
            let search = match &cfg.synthesis_region {
                Some(s) => build_region(s, &b, None)?,
                None => verify.clone(),
            };
            if let Some(d0) = cfg.d0 {
                let res = minimize_fractional_s(&b.sys, d0, &search, &b.potential, Some(&verify), &sopts)?;
                Ok(TaskOutcome {
                    positive: Some(res.feasible),
                    summary: format!("sStar = {} at d0 = {d0} (worstXi {:e})", res.s_star, res.worst_xi),
                    warnings: if res.feasible { vec![] } else { vec![format!("infeasible at d0 = {d0}")] },
                    results: json!({ "bundle": b.bundle, "synthesis": res }),
                    csv: None,
                    companions: vec![],
                })
            } else {
                let dim = dimension(cfg, n)?;
                let start = match &cfg.metric {
                    Some(MetricSpec::Exponential { p0, gamma }) => {
                        Some(MetricFamily::from_p0(&SpdMatrix::new(matrix_from_rows(p0)?)?, *gamma, b.potential.clone())?)
                    }
                    Some(MetricSpec::RigidBodyAnalytic { gamma }) => match b.rigid {
                        Some(p) => Some(MetricFamily::from_p0(&p.p0(), *gamma, b.potential.clone())?),
                        None => None,
                    },
                    _ => None,
                };
                let res = synthesize_fixed_d(&b.sys, &dim, &search, &b.potential, start.as_ref(), &sopts)?;
                let field = res.family(b.potential.clone())?.metric()?;
                let cert = evaluate_second_method(
                    &b.sys,
                    &field,
                    &verify,
                    &dim,
                    &SecondMethodOptions {
                        margin,
                        integrator: cfg.integrator,
                    },
                )?
                .certificate;
                Ok(TaskOutcome {
                    positive: Some(cert.verdict == Verdict::Contractive),
                    summary: format!("worstXi = {:e} at d = {}, verified Lambda = {:e}", res.worst_xi, dim.d(), cert.bound),
                    warnings: vec![],
                    results: json!({ "bundle": b.bundle, "synthesis": res, "certificate": cert }),
                    csv: None,
                    companions: vec![],
                })
            }
        }
        Task::Floquet => {
            let (x, t) = orbit_guess(cfg, &b)?;
            let opts = OrbitalOptions {
                integrator: cfg.integrator,
                ..Default::default()
            };
            let (rep, metric) = orbital_analysis(&b.sys, &x, t, &opts)?;
            let mut csv = String::from("index,re,im,modulus\n");
            for (i, m) in rep.multipliers.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    i + 1,
                    crate::report::fmt17(m.re),
                    crate::report::fmt17(m.im),
                    crate::report::fmt17(m.modulus)
                ));
            }
            let mut companions = vec![];
            if let Some(pm) = &metric {
                let scan = scan_orbit_roots(pm, opts.samples)?;
                let mut c = String::from("t");
                for i in 1..=n {
                    c.push_str(&format!(",lambda{i}"));
                }
                c.push('\n');
                for (t, r) in scan.times.iter().zip(&scan.roots) {
                    let row: Vec<String> = std::iter::once(*t).chain(r.iter().copied()).map(crate::report::fmt17).collect();
                    c.push_str(&row.join(","));
                    c.push('\n');
                }
                companions.push(CsvTable { name: "lambda".into(), content: c });
            }
            Ok(TaskOutcome {
                positive: Some(rep.verdict == OrbitalVerdict::OrbitallyStable),
                summary: format!(
                    "|rho2| = {:.8}, andronovWitt = {}, verdict {:?}",
                    rep.multipliers.get(1).map_or(0.0, |m| m.modulus),
                    rep.andronov_witt,
                    rep.verdict
                ),
                warnings: vec![],
                results: json!({ "bundle": b.bundle, "floquet": rep }),
                csv: Some(csv),
                companions,
            })
        }
        Task::Kcompound => {
            let region = region_of(cfg, &b, pm.as_ref())?;
            let k = cfg.k.unwrap_or(2);
            let rep = kcompound_check(&b.sys, k, &region)?;
            Ok(TaskOutcome {
                positive: Some(rep.holds),
                summary: format!("sup nu(Df^[{k}]) = {:e}", rep.sup_log_norm),
                warnings: vec![],
                results: json!({ "bundle": b.bundle, "kcompound": rep }),
                csv: None,
                companions: vec![],
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        for s in [DemoSystem::RigidBody, DemoSystem::Rossler, DemoSystem::Langford] {
            let cfg = RunConfig::from_json(s.fixture()).unwrap();
            let back: RunConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = RunConfig::from_json(r#"{"system":{"kind":"harmonic"},"task":"simulate","bogus":1}"#).unwrap_err();
        assert!(err.is_input());
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::from_json(DemoSystem::Langford.fixture()).unwrap();
        let o = Overrides {
            a: Some(0.65),
            seed: Some(7),
            t_max: Some(3.0),
            ..Default::default()
        };
        let cfg = apply_overrides(cfg, &o).unwrap();
        assert_eq!(cfg.system, SystemSpec::Langford { a: 0.65 });
        assert_eq!(cfg.t_max, Some(3.0));
        assert_eq!(cfg.seeds[0], 7);
    }

    #[test]
    fn regrid_variants() {
        let r = regrid(RegionSpec::YSlice { y_max: 20.0, step: 0.005 }, "5").unwrap();
        assert_eq!(r, RegionSpec::YSlice { y_max: 20.0, step: 10.0 });
        assert!(regrid(RegionSpec::Point { x: vec![0.0] }, "abc").is_err());
    }
}
