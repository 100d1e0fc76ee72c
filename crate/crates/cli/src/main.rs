//! `ehyp`: runs residual checks on JSON scenes and writes JSON and CSV reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ehyp_core::classifier::{
    base_samples, build_example_theorem3, certify_example, constant_curvature_spread, cylinder_identities, stencil_margin,
    two_curvature_lcf_check, CertifyOptions, ExampleBuild, ExampleTheorem3Spec,
};
use ehyp_core::curvature::{build_mwp_metric, curvature_oracle_with, CoordinateMetric, MwpSpec};
use ehyp_core::exec::Execution;
use ehyp_core::grid::{GridSpec, SampleGrid};
use ehyp_core::hypersurface::{einstein_residual, structure_residuals, CheckConfig, StructureData, StructureDataSpec};
use ehyp_core::report::{ResidualReport, Tolerances, SCHEMA_VERSION};
use ehyp_core::scalarfun::{f_ode_residual, solve_f_ode};

#[derive(Parser, Debug)]
#[command(name = "ehyp", version, about = "Residual checks for Einstein hypersurfaces of warped products")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scene JSON file.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    /// Output directory for report.json and report.csv.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Points per grid axis (overrides the scene).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Tolerance override `name=value`; may be repeated.
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE")]
    tol: Vec<String>,
    /// Seed for random planes and vector fields.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Evaluate grid points on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Curvature tensors at every grid point.
    Curvature,
    /// Structure conditions (A)-(F) of a hypersurface datum.
    CheckStructure,
    /// sup |Ric - ρ g| over the grid.
    CheckEinstein,
    /// Builds the two-fiber example and runs the full certification.
    BuildExample,
    /// Spread of sampled sectional curvatures.
    Spread,
    /// Weyl tensor of a single-fiber warped product.
    Lcf,
    /// Algebraic identities for a cylinder ambient.
    Cylinder,
    /// Samples of the closed-form warping function.
    SolveF,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Curvature => "curvature",
            Command::CheckStructure => "check-structure",
            Command::CheckEinstein => "check-einstein",
            Command::BuildExample => "build-example",
            Command::Spread => "spread",
            Command::Lcf => "lcf",
            Command::Cylinder => "cylinder",
            Command::SolveF => "solve-f",
        }
    }
}

#[derive(Deserialize, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum SceneKind {
    MwpMetric,
    StructureData,
    ExampleTheorem3,
    CylinderQuery,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct Scene {
    kind: SceneKind,
    payload: Value,
    #[serde(default)]
    grid: GridConfig,
    #[serde(default)]
    tolerances: BTreeMap<String, f64>,
    /// Einstein constant for `check-einstein`; defaults to the example's `ρ`.
    #[serde(default)]
    rho: Option<f64>,
    /// Sample count for `solve-f` and the algebraic laws.
    #[serde(default)]
    samples: Option<usize>,
    /// Random planes per point for `spread`.
    #[serde(default)]
    random_planes: Option<usize>,
}

#[derive(Deserialize, Serialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    #[serde(default = "default_points")]
    points_per_axis: usize,
    #[serde(default = "default_margin")]
    margin: f64,
}

fn default_points() -> usize {
    GridSpec::default().points_per_axis
}

fn default_margin() -> f64 {
    GridSpec::default().margin_fraction
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points_per_axis: default_points(), margin: default_margin() }
    }
}

#[derive(Deserialize, Serialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct CylinderQuery {
    n: usize,
    c: i32,
    rho: f64,
}

enum Payload {
    Mwp(MwpSpec),
    Structure(StructureData),
    Example(ExampleTheorem3Spec, Box<ExampleBuild>),
    Cylinder(CylinderQuery),
}

/// Bad input: unreadable scene, schema violation, wrong kind for the command.
#[derive(Debug)]
struct SchemaError(String);

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "schema error: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

fn schema(msg: impl Into<String>) -> anyhow::Error {
    SchemaError(msg.into()).into()
}

/// Checks that ran but did not pass; the report has already been written.
#[derive(Debug)]
struct FailedChecks(Vec<String>);

impl fmt::Display for FailedChecks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "failed checks: {}", self.0.join(", "))
    }
}

impl std::error::Error for FailedChecks {}

fn load_scene(path: Option<&Path>) -> Result<Scene> {
    let path = path.ok_or_else(|| schema("--scene <path> is required"))?;
    let text = fs::read_to_string(path).map_err(|e| schema(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))
}

fn parse_payload(scene: &Scene) -> Result<Payload> {
    fn typed<T: serde::de::DeserializeOwned>(v: &Value, what: &str) -> Result<T> {
        serde_json::from_value(v.clone()).map_err(|e| schema(format!("{what} payload: {e}")))
    }
    let invalid = |what: &str, e: ehyp_core::GeomError| schema(format!("{what} payload: {e}"));
    Ok(match scene.kind {
        SceneKind::MwpMetric => {
            let spec: MwpSpec = typed(&scene.payload, "mwp-metric")?;
            spec.validate().map_err(|e| invalid("mwp-metric", e))?;
            Payload::Mwp(spec)
        }
        SceneKind::StructureData => {
            let spec: StructureDataSpec = typed(&scene.payload, "structure-data")?;
            let data = spec.build().map_err(|e| invalid("structure-data", e))?;
            Payload::Structure(data)
        }
        SceneKind::ExampleTheorem3 => {
            let spec: ExampleTheorem3Spec = typed(&scene.payload, "example-theorem3")?;
            let build = build_example_theorem3(&spec).map_err(|e| invalid("example-theorem3", e))?;
            Payload::Example(spec, Box::new(build))
        }
        SceneKind::CylinderQuery => Payload::Cylinder(typed(&scene.payload, "cylinder-query")?),
    })
}

fn kind_name(kind: SceneKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn wrong_kind(command: Command, kind: SceneKind, allowed: &str) -> anyhow::Error {
    schema(format!("`{}` does not accept scene kind `{}`; expected {allowed}", command.name(), kind_name(kind)))
}

fn metric_of(payload: &Payload, command: Command, kind: SceneKind) -> Result<CoordinateMetric> {
    match payload {
        Payload::Mwp(spec) => Ok(build_mwp_metric(spec)?),
        Payload::Structure(data) => Ok(data.metric.clone()),
        Payload::Example(_, build) => Ok(build.data.metric.clone()),
        Payload::Cylinder(_) => Err(wrong_kind(command, kind, "mwp-metric, structure-data or example-theorem3")),
    }
}

struct Outcome {
    report: ResidualReport,
    data: Option<Value>,
    /// Extra CSV files written next to the report.
    extra_csv: Vec<(&'static str, String)>,
}

impl Outcome {
    fn report(report: ResidualReport) -> Self {
        Self { report, data: None, extra_csv: Vec::new() }
    }
}

fn grid_over(metric: &CoordinateMetric, spec: GridSpec, cfg: &CheckConfig) -> Result<SampleGrid> {
    Ok(SampleGrid::tensor(metric.bounds(), spec, stencil_margin(cfg.step)).context("building the sample grid")?)
}

fn execute(cli: &Cli, scene: &Scene, payload: &Payload, cfg: &CheckConfig, grid_spec: GridSpec) -> Result<Outcome> {
    let command = cli.command;
    let kind = scene.kind;
    match command {
        Command::Curvature => {
            let metric = metric_of(payload, command, kind)?;
            let grid = grid_over(&metric, grid_spec, cfg)?;
            let mut report = ResidualReport::new();
            let mut dumps = Vec::new();
            let n = metric.dim();
            let mut csv = (0..n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
            csv.push_str(",scalar,symmetry_residual,bianchi_residual\n");
            let (mut sym, mut bianchi) = (0.0f64, 0.0f64);
            for x in grid.points() {
                let b = curvature_oracle_with(&metric, &x, cfg.step, cfg.extrapolation)
                    .with_context(|| format!("check `riemann_symmetry`: curvature oracle at {x:?}"))?;
                let (s, bi) = (b.symmetry_residual(), b.bianchi_residual());
                sym = sym.max(s);
                bianchi = bianchi.max(bi);
                let coords: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
                csv.push_str(&format!("{},{:e},{s:e},{bi:e}\n", coords.join(","), b.scalar));
                dumps.push(json!({
                    "point": x,
                    "metric": rows(&b.metric),
                    "christoffel": b.christoffel,
                    "riemann": b.riemann,
                    "ricci": rows(&b.ricci),
                    "scalar": b.scalar,
                }));
            }
            report.push_with(&cfg.tolerances, "riemann_symmetry", sym, grid.describe());
            report.push_with(&cfg.tolerances, "bianchi", bianchi, grid.describe());
            report.note("riemann[((i*n + j)*n + k)*n + l] = <R(d_i, d_j) d_k, d_l>; christoffel[(k*n + i)*n + j] = Gamma^k_ij");
            Ok(Outcome { report, data: Some(Value::Array(dumps)), extra_csv: vec![("curvature.csv", csv)] })
        }
        Command::CheckStructure => {
            let data = match payload {
                Payload::Structure(data) => data,
                Payload::Example(_, build) => &build.data,
                _ => return Err(wrong_kind(command, kind, "structure-data or example-theorem3")),
            };
            let grid = grid_over(&data.metric, grid_spec, cfg)?;
            let report = structure_residuals(data, &grid, cfg).context("check `structure_residuals`")?;
            Ok(Outcome::report(report))
        }
        Command::CheckEinstein => {
            let metric = metric_of(payload, command, kind)?;
            let rho = match (scene.rho, payload) {
                (Some(rho), _) => rho,
                (None, Payload::Example(spec, _)) => spec.rho,
                (None, _) => return Err(schema("check-einstein needs a scene `rho` for this kind")),
            };
            let grid = grid_over(&metric, grid_spec, cfg)?;
            let report = einstein_residual(&metric, rho, &grid, cfg).context("check `einstein_residual`")?;
            Ok(Outcome::report(report))
        }
        Command::BuildExample => {
            let Payload::Example(_, build) = payload else {
                return Err(wrong_kind(command, kind, "example-theorem3"));
            };
            let mut opts = CertifyOptions { grid: grid_spec, ..CertifyOptions::default() };
            if let Some(k) = scene.samples {
                opts.law_samples = k;
            }
            let report = certify_example(build, &opts, cfg).context("check `certify_example`")?;
            let structure = build.structure_spec();
            let data = json!({
                "rho": build.rho,
                "base": build.mwp.base,
                "metric": build.mwp,
                "structure": structure,
            });
            Ok(Outcome { report, data: Some(data), extra_csv: Vec::new() })
        }
        Command::Spread => {
            let metric = metric_of(payload, command, kind)?;
            let grid = grid_over(&metric, grid_spec, cfg)?;
            let planes = scene.random_planes.unwrap_or(20);
            let spread = constant_curvature_spread(&metric, &grid, planes, cfg).context("check `spread`")?;
            let mut report = ResidualReport::new();
            report.metrics.insert("spread".into(), spread.spread);
            report.metrics.insert("spread_min".into(), spread.min);
            report.metrics.insert("spread_max".into(), spread.max);
            report.metrics.insert("planes".into(), spread.planes as f64);
            Ok(Outcome { report, data: Some(serde_json::to_value(spread)?), extra_csv: Vec::new() })
        }
        Command::Lcf => {
            let Payload::Mwp(spec) = payload else {
                return Err(wrong_kind(command, kind, "mwp-metric"));
            };
            let metric = build_mwp_metric(spec)?;
            let grid = grid_over(&metric, grid_spec, cfg)?;
            let report = two_curvature_lcf_check(spec, &grid, cfg).context("check `weyl_sup`")?;
            Ok(Outcome::report(report))
        }
        Command::Cylinder => {
            let Payload::Cylinder(q) = payload else {
                return Err(wrong_kind(command, kind, "cylinder-query"));
            };
            let cyl = cylinder_identities(q.n, q.c, q.rho).context("check `cylinder_identities`")?;
            let mut report = ResidualReport::new();
            report.push_with(&cfg.tolerances, "cylinder_lambda_product", cyl.lambda_product_residual, "algebraic");
            report.metrics.insert("t_norm2".into(), cyl.t_norm2);
            for f in &cyl.flags {
                report.note(f.clone());
            }
            Ok(Outcome { report, data: Some(serde_json::to_value(&cyl)?), extra_csv: Vec::new() })
        }
        Command::SolveF => {
            let Payload::Example(spec, _) = payload else {
                return Err(wrong_kind(command, kind, "example-theorem3"));
            };
            let f = solve_f_ode(spec.n, spec.rho, spec.branch).context("check `f_ode`")?;
            let domain = spec.base_domain(&f)?;
            let ts = base_samples(&domain, scene.samples.unwrap_or(101), grid_spec.margin_fraction);
            let mut csv = String::from("t,f,df,residual\n");
            let mut sup = 0.0f64;
            for &t in &ts {
                let r = f_ode_residual(&f, spec.n, spec.rho, t).with_context(|| format!("check `f_ode` at t = {t}"))?;
                sup = sup.max(r);
                csv.push_str(&format!("{t:e},{:e},{:e},{r:e}\n", f.value(t), f.d1(t)));
            }
            let mut report = ResidualReport::new();
            report.push_with(&cfg.tolerances, "f_ode", sup, format!("{} samples on {domain}", ts.len()));
            let data = json!({ "f": f, "domain": domain });
            Ok(Outcome { report, data: Some(data), extra_csv: vec![("f.csv", csv)] })
        }
    }
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn run(cli: &Cli) -> Result<()> {
    let scene = load_scene(cli.scene.as_deref())?;
    let payload = parse_payload(&scene)?;

    let mut tolerances = Tolerances::default();
    for (name, value) in &scene.tolerances {
        if !(*value >= 0.0) {
            return Err(schema(format!("tolerance `{name}` must be >= 0")));
        }
        tolerances.set(name, *value);
    }
    for spec in &cli.tol {
        tolerances.apply_override(spec).map_err(|e| schema(e.to_string()))?;
    }
    let mut cfg = CheckConfig { seed: cli.seed, tolerances, ..CheckConfig::default() };
    if let Some(step) = cli.step {
        if !(step > 0.0 && step.is_finite()) {
            return Err(schema(format!("--step must be positive, got {step}")));
        }
        cfg.step = step;
    }
    if cli.sequential {
        cfg.execution = Execution::Sequential;
    }
    let grid_spec = GridSpec {
        points_per_axis: cli.grid.unwrap_or(scene.grid.points_per_axis),
        margin_fraction: scene.grid.margin,
    };
    if grid_spec.points_per_axis == 0 || !(0.0..0.5).contains(&grid_spec.margin_fraction) {
        return Err(schema("grid needs points_per_axis >= 1 and 0 <= margin < 0.5"));
    }

    let outcome = execute(cli, &scene, &payload, &cfg, grid_spec)?;
    let pass = outcome.report.all_pass();
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": cli.command.name(),
        "scene_kind": scene.kind,
        "seed": cli.seed,
        "step": cfg.step,
        "grid": { "points_per_axis": grid_spec.points_per_axis, "margin": grid_spec.margin_fraction },
        "tolerances": cfg.tolerances,
        "checks": outcome.report.checks,
        "metrics": outcome.report.metrics,
        "notes": outcome.report.notes,
        "pass": pass,
        "data": outcome.data,
    });
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = cli.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("report.json", serde_json::to_string_pretty(&report)?)?;
    write("report.csv", outcome.report.to_csv())?;
    for (name, text) in outcome.extra_csv {
        write(name, text)?;
    }
    if pass {
        Ok(())
    } else {
        Err(FailedChecks(outcome.report.failing().into_iter().map(String::from).collect()).into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<SchemaError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
