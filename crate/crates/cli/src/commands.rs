use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tpsurf_core::complex::{parse_ndmesh, parse_obj, probe_indices, MeshFormat};
use tpsurf_core::flow::{flow_run, FlowPolicy, FlowStatus};
use tpsurf_core::linkdiag::{linking_mod2, SphereProbe};
use tpsurf_core::regdiag::{ahlfors_radius, beta_curve, beta_decay_fit, stopping_distance, BetaOptions};
use tpsurf_core::tpe::{energy, ExponentRegime};
use tpsurf_core::{Error, Plane, SimplicialSet};

use crate::config::{CommonArgs, RadiiSpec, RunConfig};
use crate::error::{CliError, Result, CRITERION_FAILURE};
use crate::fixtures::{self, FixtureArgs};
use crate::report::{read_input, write_text, InputDigest, Report, Timing};
use crate::verify;

/// Tangent-point energy diagnostics for simplicial sets.
#[derive(Parser, Debug)]
#[command(name = "tpsurf", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Total energy of a mesh
    Energy(MeshArgs),
    /// Run the regularity battery; exits with 4 when a criterion fails
    Verify(MeshArgs),
    /// Measure-constrained gradient flow
    Flow(FlowArgs),
    /// Beta numbers around one point
    Beta(BetaArgs),
    /// Linking parity with a round probe sphere
    Linking(LinkingArgs),
    /// Stopping distances
    Stopping(StoppingArgs),
    /// Write one of the built-in test meshes
    Fixture(FixtureArgs),
}

impl Command {
    pub fn common(&self) -> Option<&CommonArgs> {
        match self {
            Command::Energy(a) | Command::Verify(a) => Some(&a.common),
            Command::Flow(a) => Some(&a.common),
            Command::Beta(a) => Some(&a.common),
            Command::Linking(a) => Some(&a.common),
            Command::Stopping(a) => Some(&a.common),
            Command::Fixture(_) => None,
        }
    }
}

#[derive(Args, Debug)]
pub struct MeshArgs {
    /// Input mesh (.obj or .ndmesh)
    pub mesh: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct FlowArgs {
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Compare analytic and difference gradients every this many steps
    #[arg(long)]
    pub audit_every: Option<usize>,
    /// Write the final mesh here
    #[arg(long)]
    pub mesh_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct BetaArgs {
    pub mesh: PathBuf,
    /// Quadrature point at the center of the balls
    #[arg(long, default_value_t = 0)]
    pub center_index: usize,
    /// Also fit the decay exponent over the probe points
    #[arg(long)]
    pub fit: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct LinkingArgs {
    pub mesh: PathBuf,
    /// Mesh of a round probe sphere (a circle for curves in 3-space)
    #[arg(required_unless_present = "points", conflicts_with = "points")]
    pub probe: Option<PathBuf>,
    /// Two points `x,y,z;x,y,z` forming a 0-sphere probe
    #[arg(long)]
    pub points: Option<String>,
    /// Polygon size of circular probes
    #[arg(long, default_value_t = 64)]
    pub segments: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct StoppingArgs {
    pub mesh: PathBuf,
    /// Single quadrature point; otherwise evenly spaced probes
    #[arg(long)]
    pub x_index: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Energy(a) => cmd_energy(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Flow(a) => cmd_flow(&a),
        Command::Beta(a) => cmd_beta(&a),
        Command::Linking(a) => cmd_linking(&a),
        Command::Stopping(a) => cmd_stopping(&a),
        Command::Fixture(a) => {
            let set = fixtures::build(&a)?;
            set.save(&a.output)?;
            println!(
                "wrote {} ({} vertices, {} simplices)",
                a.output.display(),
                set.num_vertices(),
                set.num_simplices()
            );
            Ok(0)
        }
    }
}

/// Reads a mesh, picking the parser from the file extension.
pub fn load_mesh(path: &Path) -> Result<(SimplicialSet, InputDigest)> {
    let format = MeshFormat::from_path(path)?;
    let (bytes, digest) = read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        CliError::Core(Error::Parse {
            line: 0,
            message: format!("not UTF-8: {e}"),
        })
    })?;
    let set = match format {
        MeshFormat::Obj => parse_obj(&text)?,
        MeshFormat::Ndmesh => parse_ndmesh(&text)?,
    };
    Ok((set, digest))
}

struct Emit {
    report: Report,
    summary: String,
    csv: Option<String>,
}

fn emit(common: &CommonArgs, started: Instant, mut out: Emit) -> Result<()> {
    if !common.deterministic {
        out.report.timing = Some(Timing {
            elapsed_seconds: started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        });
    }
    let json = out.report.to_json()?;
    let to_stdout = common.out.as_deref().is_some_and(|p| p.as_os_str() == "-");
    if let Some(path) = &common.out {
        write_text(path, &json)?;
    }
    if !to_stdout {
        print!("{}", out.summary);
    }
    if let (Some(path), Some(csv)) = (&common.csv, &out.csv) {
        write_text(path, csv)?;
    }
    Ok(())
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn cmd_energy(a: &MeshArgs) -> Result<i32> {
    let started = Instant::now();
    let (set, digest) = load_mesh(&a.mesh)?;
    let cfg = RunConfig::resolve(&a.common, &set)?;
    let cloud = cfg.cloud(&set)?;
    let mut e = energy(&cloud, &cfg.energy_options())?;
    e.elapsed = None;
    let summary = format!(
        "energy: {:.12e}\nregime: {:?}\nmax inverse tangent-point radius: {:.6e}\nerror bound: {:.3e}\n",
        e.total_energy, e.regime, e.max_inv_rtp, e.acceleration_error_bound
    );
    let result = json!({
        "vertices": set.num_vertices(),
        "simplices": set.num_simplices(),
        "quadrature_points": cloud.len(),
        "energy": e,
    });
    emit(
        &a.common,
        started,
        Emit {
            report: Report::new("energy", vec![digest], Some(cfg), result),
            summary,
            csv: None,
        },
    )?;
    Ok(0)
}

fn cmd_verify(a: &MeshArgs) -> Result<i32> {
    let started = Instant::now();
    let (set, digest) = load_mesh(&a.mesh)?;
    let cfg = RunConfig::resolve(&a.common, &set)?;
    let cloud = cfg.cloud(&set)?;
    let mut outcome = verify::run(&set, &cloud, &cfg)?;
    outcome.energy.elapsed = None;
    let mut summary = format!("energy: {:.12e}\n", outcome.energy.total_energy);
    if let Some(r1) = outcome.r1 {
        summary.push_str(&format!("R_1: {r1:.6e}\n"));
    }
    for c in &outcome.criteria {
        summary.push_str(&format!("{}: {} ({})\n", c.name, c.status.label(), c.detail));
    }
    let failed = !outcome.failures().is_empty();
    let csv = csv_text(
        &["criterion", "status", "detail"],
        outcome
            .criteria
            .iter()
            .map(|c| vec![c.name.clone(), c.status.label().to_string(), c.detail.clone()]),
    )?;
    emit(
        &a.common,
        started,
        Emit {
            report: Report::new("verify", vec![digest], Some(cfg), serde_json::to_value(&outcome)?),
            summary,
            csv: Some(csv),
        },
    )?;
    Ok(if failed { CRITERION_FAILURE } else { 0 })
}

fn cmd_flow(a: &FlowArgs) -> Result<i32> {
    let started = Instant::now();
    let (set, digest) = load_mesh(&a.mesh)?;
    let cfg = RunConfig::resolve(&a.common, &set)?;
    let policy = FlowPolicy {
        audit_every: a.audit_every,
        ..FlowPolicy::default()
    };
    let run = flow_run(set, cfg.q, a.steps, &policy, |_, r| {
        log::info!("step {} energy {:.10e} step size {:.3e}", r.step, r.energy, r.step_size);
    })?;
    if let Some(path) = &a.mesh_out {
        run.state.mesh.save(path)?;
    }
    let first = run.series.records.first().map(|r| r.energy);
    let last = run.series.records.last().map(|r| r.energy);
    let mut summary = String::new();
    for w in &run.series.warnings {
        summary.push_str(&format!("warning: {w}\n"));
    }
    summary.push_str(&format!(
        "status: {:?} after {} steps\nenergy: {:.10e} -> {:.10e}\n",
        run.state.status,
        run.state.step,
        first.unwrap_or(f64::NAN),
        last.unwrap_or(f64::NAN)
    ));
    if let Some(worst) = run.state.audits.iter().map(|a| a.1).reduce(f64::max) {
        summary.push_str(&format!("worst gradient audit: {worst:.3e}\n"));
    }
    let result = json!({
        "status": run.state.status,
        "steps": run.state.step,
        "regime": run.series.regime,
        "warnings": run.series.warnings,
        "initial_energy": first,
        "final_energy": last,
        "measure_target": run.state.measure_target,
        "audits": run.state.audits,
        "records": run.series.records,
    });
    emit(
        &a.common,
        started,
        Emit {
            report: Report::new("flow", vec![digest], Some(cfg), result),
            summary,
            csv: Some(run.series.to_csv()),
        },
    )?;
    Ok(if run.state.status == FlowStatus::Quality { CRITERION_FAILURE } else { 0 })
}

fn default_radii(set: &SimplicialSet) -> Vec<f64> {
    let hi = set.diameter() / 4.0;
    let lo = (2.0 * set.max_edge()).min(hi);
    RadiiSpec::log10(lo, hi, 8).values()
}

fn cmd_beta(a: &BetaArgs) -> Result<i32> {
    let started = Instant::now();
    let (set, digest) = load_mesh(&a.mesh)?;
    let cfg = RunConfig::resolve(&a.common, &set)?;
    let cloud = cfg.cloud(&set)?;
    if a.center_index >= cloud.len() {
        return Err(CliError::Usage(format!(
            "center index {} out of range (cloud has {} points)",
            a.center_index,
            cloud.len()
        )));
    }
    let radii = cfg.radii.clone().unwrap_or_else(|| default_radii(&set));
    let opts = BetaOptions {
        seed: cfg.seed,
        ..BetaOptions::default()
    };
    let x = cloud.position(a.center_index).to_vec();
    let curve = beta_curve(&cloud, &x, &radii, &opts)?;
    let csv = csv_text(
        &["radius", "beta", "lower", "points"],
        curve.samples.iter().map(|s| {
            vec![
                format!("{:.16e}", s.radius),
                format!("{:.16e}", s.beta),
                format!("{:.16e}", s.lower),
                s.points.to_string(),
            ]
        }),
    )?;
    let fit = if a.fit {
        let probes: Vec<Vec<f64>> = probe_indices(cloud.len(), cfg.probes)
            .into_iter()
            .map(|i| cloud.position(i).to_vec())
            .collect();
        Some(beta_decay_fit(&cloud, &probes, &radii, &opts)?)
    } else {
        None
    };
    let mut summary = csv.clone();
    if let Some(f) = &fit {
        summary.push_str(&format!("decay fit: {}\n", serde_json::to_string(f)?));
    }
    let result = json!({ "curve": curve, "fit": fit });
    let csv = a.common.csv.as_ref().map(|_| csv);
    emit(
        &a.common,
        started,
        Emit {
            report: Report::new("beta", vec![digest], Some(cfg), result),
            summary,
            csv,
        },
    )?;
    Ok(0)
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad coordinate {t:?} in {s:?}")))
        })
        .collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative tolerance for accepting a probe mesh as a round circle.
const ROUND_TOL: f64 = 1e-6;

/// The round circle through the vertices of a closed polygon.
fn circle_probe(mesh: &SimplicialSet, segments: usize) -> Result<SphereProbe> {
    let (n, k) = (mesh.ambient_dim(), mesh.num_vertices());
    if mesh.intrinsic_dim() != 1 || k < 3 {
        return Err(Error::Precondition("probe mesh must be a closed polygon".into()).into());
    }
    let mut c = vec![0.0; n];
    for i in 0..k {
        for (cj, vj) in c.iter_mut().zip(mesh.vertex(i)) {
            *cj += vj / k as f64;
        }
    }
    let radius = (0..k).map(|i| norm(&sub(mesh.vertex(i), &c))).sum::<f64>() / k as f64;
    let a = sub(mesh.vertex(0), &c);
    let line = Plane::span(n, &[a.clone()])?;
    let b = (1..k)
        .map(|i| sub(mesh.vertex(i), &c))
        .max_by(|u, v| line.normal_norm(u).total_cmp(&line.normal_norm(v)))
        .expect("at least three vertices");
    let plane = Plane::span(n, &[a, b])?;
    for i in 0..k {
        let v = sub(mesh.vertex(i), &c);
        if (norm(&v) - radius).abs() > ROUND_TOL * radius || plane.normal_norm(&v) > ROUND_TOL * radius {
            return Err(Error::Precondition(format!("probe vertex {i} is off the fitted round circle")).into());
        }
    }
    Ok(SphereProbe::new(c, radius, plane, segments)?)
}

fn point_pair_probe(spec: &str) -> Result<SphereProbe> {
    let pts: Vec<&str> = spec.split(';').collect();
    if pts.len() != 2 {
        return Err(CliError::Usage(format!("expected two points separated by ';', got {spec:?}")));
    }
    let (p, q) = (parse_point(pts[0])?, parse_point(pts[1])?);
    if p.len() != q.len() {
        return Err(CliError::Usage("probe points differ in dimension".into()));
    }
    let c: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
    let d = sub(&q, &p);
    let radius = 0.5 * norm(&d);
    let plane = Plane::span(p.len(), &[d])?;
    Ok(SphereProbe::new(c, radius, plane, 2)?)
}

fn cmd_linking(a: &LinkingArgs) -> Result<i32> {
    let started = Instant::now();
    let (set, digest) = load_mesh(&a.mesh)?;
    let mut inputs = vec![digest];
    let probe = match (&a.probe, &a.points) {
        (Some(path), _) => {
            let (mesh, d) = load_mesh(path)?;
            inputs.push(d);
            circle_probe(&mesh, a.segments)?
        }
        (None, Some(spec)) => point_pair_probe(spec)?,
        (None, None) => return Err(CliError::Usage("give a probe mesh or --points".into())),
    };
    let cfg = RunConfig::resolve(&a.common, &set)?;
    let parity = linking_mod2(&set, &probe)?;
    let result = json!({ "parity": parity, "probe": probe });
    emit(
        &a.common,
        started,
        Emit {
            report: Report::new("linking", inputs, Some(cfg), result),
            summary: format!("parity: {parity}\n"),
            csv: None,
        },
    )?;
    Ok(0)
}

fn cmd_stopping(a: &StoppingArgs) -> Result<i32> {
    let started = Instant::now();
    let (set, digest) = load_mesh(&a.mesh)?;
    let cfg = RunConfig::resolve(&a.common, &set)?;
    let cloud = cfg.cloud(&set)?;
    let stop = cfg.stopping_config();
    let indices = match a.x_index {
        Some(i) => vec![i],
        None => probe_indices(cloud.len(), cfg.probes),
    };
    let mut results = Vec::new();
    let mut misses = Vec::new();
    for &i in &indices {
        match stopping_distance(&set, &cloud, i, &stop) {
            Ok(r) => results.push((i, r)),
            Err(Error::NoFirstHit) if a.x_index.is_none() => misses.push(i),
            Err(e) => return Err(e.into()),
        }
    }
    let m = set.intrinsic_dim();
    let r1 = if ExponentRegime::of(cfg.q, m) == ExponentRegime::Supercritical {
        let e = energy(&cloud, &cfg.energy_options())?.total_energy;
        Some(ahlfors_radius(m, cfg.q, stop.lambda, stop.eta, e)?)
    } else {
        None
    };
    let d_min = results.iter().map(|r| r.1.d_s).reduce(f64::min);
    let csv = csv_text(
        &["index", "d_s", "uncertainty", "case", "rounds"],
        results.iter().map(|(i, r)| {
            vec![
                i.to_string(),
                format!("{:.16e}", r.d_s),
                format!("{:.16e}", r.uncertainty),
                serde_json::to_value(r.case).map(|v| v.as_str().unwrap_or_default().to_string()).unwrap_or_default(),
                r.radii_history.len().to_string(),
            ]
        }),
    )?;
    let mut summary = csv.clone();
    match d_min {
        Some(d) => summary.push_str(&format!("min d_s: {d:.6e}\n")),
        None => summary.push_str("no probe cone meets the set\n"),
    }
    if let Some(r) = r1 {
        summary.push_str(&format!("R_1: {r:.6e}\n"));
    }
    if !cfg.stopping.within_theorem_constants {
        summary.push_str("note: delta is outside the range covered by the theory\n");
    }
    let points: Vec<Value> = results
        .iter()
        .map(|(i, r)| json!({ "index": i, "result": r }))
        .collect();
    let result = json!({ "d_min": d_min, "r1": r1, "no_first_hit": misses, "points": points });
    emit(
        &a.common,
        started,
        Emit {
            report: Report::new("stopping", vec![digest], Some(cfg), result),
            summary,
            csv: Some(csv),
        },
    )?;
    Ok(0)
}
