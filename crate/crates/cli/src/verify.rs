//! The regularity battery run by `tpsurf verify`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tpsurf_core::complex::{check_admissibility, probe_indices};
use tpsurf_core::regdiag::{
    ahlfors_curve, ahlfors_radius, beta_decay_fit, holder_fit, stopping_distance, BetaOptions, DecayFit, GraphPatch,
    PatchOutcome,
};
use tpsurf_core::tpe::{energy, EnergyReport};
use tpsurf_core::{Error, QuadratureCloud, SimplicialSet};

use crate::config::{RadiiSpec, RunConfig};
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// The input is flat or has zero energy; the bound holds trivially.
    FlatInput,
    /// A known counterexample behaves as the theory allows (outside the claimed range).
    ExpectedFail,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::FlatInput => "PASS (flat input)",
            Status::ExpectedFail => "EXPECTED-FAIL",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub status: Status,
    pub detail: String,
    pub measured: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub energy: EnergyReport,
    /// Radius below which the Ahlfors lower bound is claimed.
    pub r1: Option<f64>,
    pub criteria: Vec<Criterion>,
    pub admissibility: Value,
}

impl VerifyOutcome {
    pub fn failures(&self) -> Vec<&Criterion> {
        self.criteria.iter().filter(|c| c.status == Status::Fail).collect()
    }
}

/// Stopping distances are tested at this many probes at most.
const STOPPING_PROBES: usize = 8;
/// Hölder patches at this many probes at most.
const HOLDER_PATCHES: usize = 4;

pub fn run(set: &SimplicialSet, cloud: &QuadratureCloud, cfg: &RunConfig) -> Result<VerifyOutcome> {
    let m = set.intrinsic_dim();
    let q = cfg.q;
    if !(q > 2.0 * m as f64) {
        return Err(CliError::Core(Error::Precondition(format!(
            "the regularity checks need q > 2m = {}, got q = {q}",
            2 * m
        ))));
    }
    let e = energy(cloud, &cfg.energy_options())?;
    let diam = set.diameter();
    let h = set.max_edge();
    let admissibility = match check_admissibility(set, cloud, &[2.0 * h, 4.0 * h], cfg.probes, cfg.stopping.delta) {
        Ok(a) => serde_json::to_value(a)?,
        Err(err) => json!({ "unavailable": err.to_string() }),
    };
    if e.total_energy == 0.0 {
        let criteria = ["ahlfors", "beta-decay", "holder", "stopping-distance"]
            .iter()
            .map(|n| Criterion {
                name: n.to_string(),
                status: Status::FlatInput,
                detail: "zero energy".into(),
                measured: Value::Null,
            })
            .collect();
        return Ok(VerifyOutcome {
            energy: e,
            r1: None,
            criteria,
            admissibility,
        });
    }
    let stop = cfg.stopping_config();
    let r1 = ahlfors_radius(m, q, stop.lambda, stop.eta, e.total_energy)?;
    let criteria = vec![
        unresolved("ahlfors", ahlfors(set, cfg, r1, h, diam))?,
        unresolved("beta-decay", beta_decay(cloud, cfg, h, diam))?,
        unresolved("holder", holder(cloud, cfg, diam))?,
        unresolved("stopping-distance", stopping(set, cloud, cfg, r1))?,
    ];
    Ok(VerifyOutcome {
        energy: e,
        r1: Some(r1),
        criteria,
        admissibility,
    })
}

/// A criterion the mesh is too coarse to evaluate counts as failed.
fn unresolved(name: &str, r: Result<Criterion>) -> Result<Criterion> {
    match r {
        Err(CliError::Core(e @ Error::InsufficientData { .. })) => Ok(Criterion {
            name: name.into(),
            status: Status::Fail,
            detail: format!("mesh too coarse: {e}"),
            measured: Value::Null,
        }),
        other => other,
    }
}

fn ahlfors(set: &SimplicialSet, cfg: &RunConfig, r1: f64, h: f64, diam: f64) -> Result<Criterion> {
    let probes: Vec<Vec<f64>> = probe_indices(set.num_vertices(), cfg.probes)
        .into_iter()
        .map(|i| set.vertex(i).to_vec())
        .collect();
    let mut radii = vec![r1];
    radii.extend(
        cfg.radii
            .clone()
            .unwrap_or_else(|| RadiiSpec::log10(2.0 * h, (diam / 2.0).max(2.0 * h), 8).values()),
    );
    let curve = ahlfors_curve(set, &probes, &radii, Some(r1))?;
    let dips: Vec<f64> = curve.samples.iter().filter(|s| s.below_half).map(|s| s.radius).collect();
    let status = if curve.violations() > 0 {
        Status::Fail
    } else if !dips.is_empty() {
        Status::ExpectedFail
    } else {
        Status::Pass
    };
    let detail = match status {
        Status::Fail => format!("{} ratios below 1/2 at radii <= R_1 = {r1:.3e}", curve.violations()),
        Status::ExpectedFail => format!(
            "ratio below 1/2 only at radii > R_1 = {r1:.3e} (smallest such radius {:.3e})",
            dips.iter().cloned().fold(f64::INFINITY, f64::min)
        ),
        _ => format!("min ratio {:.4} over {} samples", curve.min_ratio(), curve.samples.len()),
    };
    Ok(Criterion {
        name: "ahlfors".into(),
        status,
        detail,
        measured: json!({ "min_ratio": curve.min_ratio(), "violations": curve.violations(), "curve": curve }),
    })
}

fn beta_decay(cloud: &QuadratureCloud, cfg: &RunConfig, h: f64, diam: f64) -> Result<Criterion> {
    let radii = match &cfg.radii {
        Some(r) => r.clone(),
        None => {
            let lo = (diam / 20.0).max(h);
            let hi = 10.0 * lo;
            if hi > diam {
                return Ok(Criterion {
                    name: "beta-decay".into(),
                    status: Status::Fail,
                    detail: format!("mesh too coarse for a decade of radii below the diameter (edge {h:.3e})"),
                    measured: Value::Null,
                });
            }
            RadiiSpec::log10(lo, hi, 6).values()
        }
    };
    let probes: Vec<Vec<f64>> = probe_indices(cloud.len(), cfg.probes)
        .into_iter()
        .map(|i| cloud.position(i).to_vec())
        .collect();
    let opts = BetaOptions {
        seed: cfg.seed,
        ..BetaOptions::default()
    };
    let kappa = cfg.constants.kappa;
    let fit = beta_decay_fit(cloud, &probes, &radii, &opts)?;
    let (status, detail) = match &fit {
        DecayFit::FlatInput => (Status::FlatInput, "all beta numbers vanish".to_string()),
        DecayFit::Fit(f) if f.slope >= kappa => (Status::Pass, format!("slope {:.4} >= kappa = {kappa:.4}", f.slope)),
        DecayFit::Fit(f) => (Status::Fail, format!("slope {:.4} < kappa = {kappa:.4}", f.slope)),
    };
    Ok(Criterion {
        name: "beta-decay".into(),
        status,
        detail,
        measured: json!({ "kappa": kappa, "radii": radii, "fit": fit }),
    })
}

fn holder(cloud: &QuadratureCloud, cfg: &RunConfig, diam: f64) -> Result<Criterion> {
    let patches: Vec<GraphPatch> = probe_indices(cloud.len(), cfg.probes.min(HOLDER_PATCHES))
        .into_iter()
        .map(|i| GraphPatch {
            center: cloud.position(i).to_vec(),
            radius: diam / 8.0,
            plane: cloud.plane(i),
        })
        .collect();
    let report = holder_fit(cloud, &patches, cfg.q)?;
    let mu = cfg.constants.mu;
    let rejected = report
        .patches
        .iter()
        .filter(|p| matches!(p, PatchOutcome::Rejected { .. }))
        .count();
    let all_flat = report.patches.iter().all(|p| matches!(p, PatchOutcome::FlatInput));
    let (status, detail) = match report.mu_hat {
        _ if rejected > 0 => (Status::Fail, format!("{rejected} patches are not graphs over their tangent planes")),
        None if all_flat => (Status::FlatInput, "tangent planes do not oscillate".to_string()),
        None => (Status::Fail, "no patch produced a fit".to_string()),
        Some(v) if v >= mu => (Status::Pass, format!("mu_hat {v:.4} >= mu = {mu:.4}")),
        Some(v) => (Status::Fail, format!("mu_hat {v:.4} < mu = {mu:.4}")),
    };
    Ok(Criterion {
        name: "holder".into(),
        status,
        detail,
        measured: json!({ "mu": mu, "report": report }),
    })
}

fn stopping(set: &SimplicialSet, cloud: &QuadratureCloud, cfg: &RunConfig, r1: f64) -> Result<Criterion> {
    let stop = cfg.stopping_config();
    let mut results = Vec::new();
    let mut no_hit = 0;
    for xi in probe_indices(cloud.len(), cfg.probes.min(STOPPING_PROBES)) {
        match stopping_distance(set, cloud, xi, &stop) {
            Ok(r) => results.push(r),
            Err(Error::NoFirstHit) => no_hit += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if results.is_empty() {
        return Ok(Criterion {
            name: "stopping-distance".into(),
            status: Status::FlatInput,
            detail: format!("no probe cone ever meets the set ({no_hit} probes)"),
            measured: Value::Null,
        });
    }
    let d = results.iter().map(|r| r.d_s).fold(f64::INFINITY, f64::min);
    let ratios_ok = results
        .iter()
        .all(|r| r.radii_history.windows(2).all(|w| w[1] > 2.0 * w[0]));
    let bound_ok = d >= 0.95 * r1;
    let status = if bound_ok && ratios_ok { Status::Pass } else { Status::Fail };
    let detail = format!(
        "min d_s {d:.4e} vs R_1 {r1:.3e}; radius growth {}",
        if ratios_ok { "> 2 throughout" } else { "violated" }
    );
    let summary: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "x": r.x,
                "d_s": r.d_s,
                "uncertainty": r.uncertainty,
                "case": r.case,
                "radii_history": r.radii_history,
                "within_theorem_constants": r.within_theorem_constants,
            })
        })
        .collect();
    Ok(Criterion {
        name: "stopping-distance".into(),
        status,
        detail,
        measured: json!({ "d": d, "r1": r1, "probes_without_hit": no_hit, "probes": summary }),
    })
}
