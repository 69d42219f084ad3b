//! Projected gradient descent of the discrete energy over vertex positions at
//! fixed total measure.
//!
//! The search direction is the negative energy gradient with its component
//! along the gradient of the total measure removed; after each trial step the
//! vertices are rescaled about their mean so the measure is restored exactly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{QuadratureCloud, SimplicialSet};
use crate::error::{Error, Result};
use crate::geom::{segment_segment_distance, triangle_triangle_distance};
use crate::linalg::dist;
use crate::tpe::{energy, gradient, EnergyOptions, ExponentRegime, GradientScheme};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlowPolicy {
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// growth of the step size after an accepted step
    pub grow: f64,
    /// stop when the worst simplex aspect falls below this
    pub min_aspect: f64,
    /// compare analytic and difference gradients every this many steps
    pub audit_every: Option<usize>,
}

impl Default for FlowPolicy {
    fn default() -> Self {
        FlowPolicy {
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 30,
            grow: 1.5,
            min_aspect: 0.02,
            audit_every: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowStatus {
    Running,
    /// the projected gradient vanished
    Stationary,
    /// no step length satisfied the sufficient-decrease test
    Stagnated,
    /// mesh quality dropped below the policy threshold
    Quality,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowState {
    pub mesh: SimplicialSet,
    pub q: f64,
    pub step: usize,
    pub step_size: f64,
    pub energy_history: Vec<f64>,
    pub measure_target: f64,
    pub status: FlowStatus,
    /// `(step, max relative gradient discrepancy)` for each audit
    pub audits: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowRecord {
    pub step: usize,
    pub energy: f64,
    pub measure: f64,
    pub max_inv_rtp: f64,
    pub min_sep: f64,
    pub step_size: f64,
}

impl FlowRecord {
    pub const HEADER: [&'static str; 6] = ["step", "energy", "measure", "max_inv_rtp", "min_sep", "step_size"];

    pub fn fields(&self) -> [String; 6] {
        [
            self.step.to_string(),
            format!("{:.16e}", self.energy),
            format!("{:.16e}", self.measure),
            format!("{:.16e}", self.max_inv_rtp),
            format!("{:.16e}", self.min_sep),
            format!("{:.16e}", self.step_size),
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowSeries {
    pub q: f64,
    pub regime: ExponentRegime,
    pub warnings: Vec<String>,
    pub records: Vec<FlowRecord>,
}

impl FlowSeries {
    /// CSV text with one `#` comment line per warning ahead of the header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            out.push_str("# ");
            out.push_str(w);
            out.push('\n');
        }
        out.push_str(&FlowRecord::HEADER.join(","));
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.fields().join(","));
            out.push('\n');
        }
        out
    }
}

/// Gradient of the total measure with respect to the vertex coordinates.
pub fn measure_gradient(set: &SimplicialSet) -> Vec<f64> {
    let (n, m) = (set.ambient_dim(), set.intrinsic_dim());
    let mut g = vec![0.0; set.num_vertices() * n];
    for s in 0..set.num_simplices() {
        let idx = set.simplex(s);
        let v0 = set.vertex(idx[0]);
        let e = DMatrix::from_fn(n, m, |r, c| set.vertex(idx[c + 1])[r] - v0[r]);
        let gram = e.transpose() * &e;
        let Some(inv) = gram.try_inverse() else { continue };
        // d(measure)/dE = measure * E (E^T E)^{-1}
        let d = (&e * inv) * set.measure(s);
        for c in 0..m {
            for r in 0..n {
                g[idx[c + 1] * n + r] += d[(r, c)];
                g[idx[0] * n + r] -= d[(r, c)];
            }
        }
    }
    g
}

/// Smallest distance between simplices that share no vertex.
pub fn min_separation(set: &SimplicialSet) -> f64 {
    let ns = set.num_simplices();
    let m = set.intrinsic_dim();
    let balls: Vec<(Vec<f64>, f64)> = (0..ns)
        .map(|s| {
            let c = set.centroid(s);
            let r = set.simplex_vertices(s).iter().map(|v| dist(v, &c)).fold(0.0, f64::max);
            (c, r)
        })
        .collect();
    let disjoint = |a: usize, b: usize| !set.simplex(a).iter().any(|v| set.simplex(b).contains(v));
    // bounding spheres give a cheap upper bound used to skip far pairs
    let bound = (0..ns)
        .into_par_iter()
        .map(|a| {
            (a + 1..ns)
                .filter(|&b| disjoint(a, b))
                .map(|b| dist(&balls[a].0, &balls[b].0) + balls[a].1 + balls[b].1)
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    (0..ns)
        .into_par_iter()
        .map(|a| {
            let va = set.simplex_vertices(a);
            let mut best = f64::INFINITY;
            for b in a + 1..ns {
                let gap = dist(&balls[a].0, &balls[b].0) - balls[a].1 - balls[b].1;
                if gap > bound.min(best) || !disjoint(a, b) {
                    continue;
                }
                let vb = set.simplex_vertices(b);
                let d = match m {
                    1 => segment_segment_distance(va[0], va[1], vb[0], vb[1]),
                    2 => triangle_triangle_distance([va[0], va[1], va[2]], [vb[0], vb[1], vb[2]]),
                    _ => va
                        .iter()
                        .flat_map(|p| vb.iter().map(move |q| dist(p, q)))
                        .fold(f64::INFINITY, f64::min),
                };
                best = best.min(d);
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Smallest distance between simplices of different connected components
/// (infinite for a connected set).
pub fn component_separation(set: &SimplicialSet) -> f64 {
    let labels = set.components();
    let ns = set.num_simplices();
    let m = set.intrinsic_dim();
    (0..ns)
        .into_par_iter()
        .map(|a| {
            let va = set.simplex_vertices(a);
            (a + 1..ns)
                .filter(|&b| labels[a] != labels[b])
                .map(|b| {
                    let vb = set.simplex_vertices(b);
                    match m {
                        1 => segment_segment_distance(va[0], va[1], vb[0], vb[1]),
                        2 => triangle_triangle_distance([va[0], va[1], va[2]], [vb[0], vb[1], vb[2]]),
                        _ => va
                            .iter()
                            .flat_map(|p| vb.iter().map(move |q| dist(p, q)))
                            .fold(f64::INFINITY, f64::min),
                    }
                })
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Largest componentwise relative discrepancy between the analytic and the
/// central-difference gradient; components below `1e-3` of the largest one are
/// compared against that floor instead. The differences are Richardson
/// extrapolated from steps `2h` and `h`, which cancels the `h^2` truncation
/// term that dominates on unevenly spaced meshes.
pub fn gradient_discrepancy(set: &SimplicialSet, q: f64) -> Result<f64> {
    const H: f64 = 1e-5;
    let a = gradient(set, q, GradientScheme::Analytic)?;
    let coarse = gradient(set, q, GradientScheme::CentralDiff { h: 2.0 * H })?;
    let mut f = gradient(set, q, GradientScheme::CentralDiff { h: H })?;
    for (fine, c) in f.values.iter_mut().zip(&coarse.values) {
        *fine = (4.0 * *fine - c) / 3.0;
    }
    let floor = 1e-3 * f.max_abs();
    if floor == 0.0 {
        return Ok(a.max_abs());
    }
    Ok(a.values
        .iter()
        .zip(&f.values)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max))
}

fn vertex_mean(v: &[f64], n: usize) -> Vec<f64> {
    let k = v.len() / n;
    let mut c = vec![0.0; n];
    for p in v.chunks(n) {
        for (a, b) in c.iter_mut().zip(p) {
            *a += b;
        }
    }
    c.iter_mut().for_each(|a| *a /= k as f64);
    c
}

/// Rescales the vertices about their mean so the total measure equals `target`.
pub fn rescale_to_measure(set: &SimplicialSet, target: f64) -> Result<SimplicialSet> {
    let n = set.ambient_dim();
    let s = (target / set.total_measure()).powf(1.0 / set.intrinsic_dim() as f64);
    let c = vertex_mean(set.vertices(), n);
    let v: Vec<f64> = set
        .vertices()
        .chunks(n)
        .flat_map(|p| p.iter().zip(&c).map(|(a, b)| b + s * (a - b)).collect::<Vec<_>>())
        .collect();
    set.with_vertices(v)
}

fn dump_path(set: &SimplicialSet) -> String {
    let path = std::env::temp_dir().join(format!("tpsurf-flow-dump-{}.ndmesh", std::process::id()));
    match set.save(&path) {
        Ok(()) => path.display().to_string(),
        Err(e) => format!("(dump failed: {e})"),
    }
}

impl FlowState {
    pub fn new(mesh: SimplicialSet, q: f64) -> Result<Self> {
        if !(q > 0.0) {
            return Err(Error::invalid("q must be positive"));
        }
        let e = gradient(&mesh, q, GradientScheme::Analytic)?.energy;
        let measure_target = mesh.total_measure();
        Ok(FlowState {
            mesh,
            q,
            step: 0,
            step_size: 0.0,
            energy_history: vec![e],
            measure_target,
            status: FlowStatus::Running,
            audits: Vec::new(),
        })
    }

    pub fn energy(&self) -> f64 {
        *self.energy_history.last().expect("history starts with the initial energy")
    }

    /// One projected, backtracked descent step.
    pub fn step(&mut self, policy: &FlowPolicy) -> Result<FlowStatus> {
        if self.status != FlowStatus::Running {
            return Ok(self.status);
        }
        if let Some(every) = policy.audit_every {
            if every > 0 && self.step % every == 0 {
                self.audits.push((self.step, gradient_discrepancy(&self.mesh, self.q)?));
            }
        }
        let g = gradient(&self.mesh, self.q, GradientScheme::Analytic)?;
        if !g.energy.is_finite() || g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "energy or gradient not finite at flow step {}; mesh written to {}",
                self.step,
                dump_path(&self.mesh)
            )));
        }
        let a = measure_gradient(&self.mesh);
        let aa: f64 = a.iter().map(|x| x * x).sum();
        let ga: f64 = g.values.iter().zip(&a).map(|(x, y)| x * y).sum();
        let dir: Vec<f64> = g
            .values
            .iter()
            .zip(&a)
            .map(|(x, y)| -(x - if aa > 0.0 { ga / aa * y } else { 0.0 }))
            .collect();
        let slope: f64 = dir.iter().map(|d| d * d).sum();
        let e0 = self.energy();
        self.step += 1;
        if slope == 0.0 {
            self.energy_history.push(e0);
            self.status = FlowStatus::Stationary;
            return Ok(self.status);
        }
        if self.step_size == 0.0 {
            let dmax = dir.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let edges = self.mesh.local_edge_lengths();
            let mean_edge = edges.iter().sum::<f64>() / edges.len() as f64;
            self.step_size = 0.1 * mean_edge / dmax;
        }
        let mut t = self.step_size;
        for _ in 0..=policy.max_backtracks {
            let trial: Vec<f64> = self.mesh.vertices().iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            let candidate = self
                .mesh
                .with_vertices(trial)
                .and_then(|m| rescale_to_measure(&m, self.measure_target));
            if let Ok(cand) = candidate {
                let e = gradient_free_energy(&cand, self.q)?;
                if e.is_finite() && e < e0 && e <= e0 - policy.armijo_c * t * slope {
                    self.mesh = cand;
                    self.energy_history.push(e);
                    self.step_size = t * policy.grow;
                    if self.mesh.min_aspect() < policy.min_aspect {
                        self.status = FlowStatus::Quality;
                    }
                    return Ok(self.status);
                }
                if !e.is_finite() {
                    log::warn!("non-finite trial energy at step {}, backtracking", self.step);
                }
            }
            t *= policy.shrink;
        }
        self.step_size = t;
        self.energy_history.push(e0);
        self.status = FlowStatus::Stagnated;
        Ok(self.status)
    }

    pub fn record(&self) -> Result<FlowRecord> {
        let cloud = QuadratureCloud::centroid(&self.mesh);
        let rep = energy(&cloud, &EnergyOptions::exact(self.q))?;
        Ok(FlowRecord {
            step: self.step,
            energy: self.energy(),
            measure: self.mesh.total_measure(),
            max_inv_rtp: rep.max_inv_rtp,
            min_sep: min_separation(&self.mesh),
            step_size: self.step_size,
        })
    }
}

fn gradient_free_energy(set: &SimplicialSet, q: f64) -> Result<f64> {
    Ok(energy(&QuadratureCloud::centroid(set), &EnergyOptions::exact(q))?.total_energy)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowRun {
    pub state: FlowState,
    pub series: FlowSeries,
}

/// Runs up to `steps` descent steps, recording the state before the first
/// step and after every step; `observe` sees the state and its record as they
/// are produced.
pub fn flow_run<F: FnMut(&FlowState, &FlowRecord)>(mesh: SimplicialSet, q: f64, steps: usize, policy: &FlowPolicy, mut observe: F) -> Result<FlowRun> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let m = mesh.intrinsic_dim();
    let regime = ExponentRegime::of(q, m);
    let mut warnings = Vec::new();
    match regime {
        ExponentRegime::Critical => warnings.push(format!("critical exponent q = 2m = {q}: the energy is scale invariant")),
        ExponentRegime::Subcritical => warnings.push(format!("subcritical exponent q = {q} < 2m")),
        ExponentRegime::Supercritical => {}
    }
    let mut state = FlowState::new(mesh, q)?;
    let mut records = vec![state.record()?];
    observe(&state, &records[0]);
    for _ in 0..steps {
        let status = state.step(policy)?;
        let r = state.record()?;
        observe(&state, &r);
        records.push(r);
        if status != FlowStatus::Running {
            break;
        }
    }
    Ok(FlowRun {
        series: FlowSeries {
            q,
            regime,
            warnings,
            records,
        },
        state,
    })
}
