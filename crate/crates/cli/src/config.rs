use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tpsurf_core::complex::{PlaneRule, QuadratureRule};
use tpsurf_core::regdiag::{log_cover_bound, StoppingConfig};
use tpsurf_core::tpe::{EnergyMode, EnergyOptions, Reduction};
use tpsurf_core::{LemmaConstants, QuadratureCloud, SimplicialSet};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    Centroid,
    Bary3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Planes {
    Flat,
    Smoothed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Bvh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Lin,
    Log10,
}

/// `lo:hi:{lin,log10}[:count]`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiiSpec {
    pub lo: f64,
    pub hi: f64,
    pub spacing: Spacing,
    pub count: usize,
}

pub const DEFAULT_RADII_COUNT: usize = 8;

impl FromStr for RadiiSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("expected lo:hi:lin|log10[:count], got {s:?}"));
        }
        let num = |t: &str| t.parse::<f64>().map_err(|_| format!("bad radius {t:?}"));
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let spacing = match parts[2] {
            "lin" => Spacing::Lin,
            "log10" => Spacing::Log10,
            other => return Err(format!("spacing must be lin or log10, got {other:?}")),
        };
        let count = match parts.get(3) {
            Some(t) => t.parse::<usize>().map_err(|_| format!("bad count {t:?}"))?,
            None => DEFAULT_RADII_COUNT,
        };
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(format!("need 0 < lo <= hi, got {lo} and {hi}"));
        }
        if count == 0 || (count == 1 && hi > lo) {
            return Err("a radius range needs at least two points".into());
        }
        Ok(RadiiSpec { lo, hi, spacing, count })
    }
}

impl RadiiSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                let t = k as f64 / last;
                if k == 0 {
                    return self.lo;
                }
                if k + 1 == self.count {
                    return self.hi;
                }
                match self.spacing {
                    Spacing::Lin => self.lo + t * (self.hi - self.lo),
                    Spacing::Log10 => 10f64.powf(self.lo.log10() + t * (self.hi.log10() - self.lo.log10())),
                }
            })
            .collect()
    }

    pub fn log10(lo: f64, hi: f64, count: usize) -> Self {
        RadiiSpec {
            lo,
            hi,
            spacing: Spacing::Log10,
            count,
        }
    }
}

/// Options shared by every analysis subcommand.
#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// Energy exponent (default 2m + 2)
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, value_enum, default_value_t = Quadrature::Centroid)]
    pub quadrature: Quadrature,
    /// Tangent planes: simplex hulls or neighbor-averaged
    #[arg(long, value_enum, default_value_t = Planes::Flat)]
    pub planes: Planes,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    pub mode: Mode,
    /// Opening parameter of the clustered mode
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Cone parameter of the stopping construction
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Radii as lo:hi:{lin,log10}[:count]
    #[arg(long)]
    pub radii: Option<RadiiSpec>,
    /// Number of probe points
    #[arg(long, default_value_t = 16)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "TPSURF_THREADS")]
    pub threads: Option<usize>,
    /// Exact reductions; omit timing and thread count from the report
    #[arg(long)]
    pub deterministic: bool,
    /// Write the JSON report here (`-` for stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write tabular output (series, curves) here
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoppingEcho {
    pub delta: f64,
    pub eta: f64,
    pub lambda: f64,
    pub log_cover: f64,
    pub within_theorem_constants: bool,
}

/// Resolved run configuration, echoed into every report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub q: f64,
    pub quadrature: Quadrature,
    pub planes: Planes,
    pub mode: EnergyMode,
    pub probes: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub radii: Option<Vec<f64>>,
    pub seed: u64,
    pub deterministic: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threads: Option<usize>,
    pub constants: LemmaConstants,
    pub stopping: StoppingEcho,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs, set: &SimplicialSet) -> Result<Self> {
        let (n, m) = (set.ambient_dim(), set.intrinsic_dim());
        let q = args.q.unwrap_or(2.0 * m as f64 + 2.0);
        if !(q > 0.0 && q.is_finite()) {
            return Err(CliError::Core(tpsurf_core::Error::InvalidArgument(format!(
                "q must be positive, got {q}"
            ))));
        }
        let mode = match args.mode {
            Mode::Exact => EnergyMode::Exact,
            Mode::Bvh => EnergyMode::Bvh { theta: args.theta },
        };
        let stop = stopping_config(args, n, m)?;
        Ok(RunConfig {
            ambient_dim: n,
            intrinsic_dim: m,
            q,
            quadrature: args.quadrature,
            planes: args.planes,
            mode,
            probes: args.probes,
            radii: args.radii.map(|r| r.values()),
            seed: args.seed,
            deterministic: args.deterministic,
            threads: if args.deterministic { None } else { Some(rayon::current_num_threads()) },
            constants: LemmaConstants::new(m, q),
            stopping: StoppingEcho {
                delta: stop.delta,
                eta: stop.eta,
                lambda: stop.lambda,
                log_cover: stop.log_cover,
                within_theorem_constants: stop.within_theorem_constants(m),
            },
        })
    }

    pub fn energy_options(&self) -> EnergyOptions {
        EnergyOptions {
            q: self.q,
            mode: self.mode,
            reduction: if self.deterministic { Reduction::Deterministic } else { Reduction::Fast },
        }
    }

    pub fn stopping_config(&self) -> StoppingConfig {
        StoppingConfig {
            delta: self.stopping.delta,
            eta: self.stopping.eta,
            lambda: self.stopping.lambda,
            log_cover: self.stopping.log_cover,
            verify_linking: false,
        }
    }

    pub fn cloud(&self, set: &SimplicialSet) -> Result<QuadratureCloud> {
        let rule = match self.quadrature {
            Quadrature::Centroid => QuadratureRule::Centroid,
            Quadrature::Bary3 => QuadratureRule::Bary3,
        };
        let planes = match self.planes {
            Planes::Flat => PlaneRule::Flat,
            Planes::Smoothed => PlaneRule::Smoothed,
        };
        Ok(QuadratureCloud::build(set, rule, planes)?)
    }
}

fn stopping_config(args: &CommonArgs, n: usize, m: usize) -> Result<StoppingConfig> {
    let mut cfg = match args.delta {
        Some(d) => StoppingConfig::with_delta(n, m, d),
        None => StoppingConfig::default_for(n, m),
    };
    if let Some(eta) = args.eta {
        if !(eta > 0.0 && eta <= cfg.delta / 5.0) {
            return Err(CliError::Usage(format!("eta must lie in (0, delta/5] = (0, {}]", cfg.delta / 5.0)));
        }
        cfg.eta = eta;
        cfg.log_cover = log_cover_bound(n, m, eta * eta);
        cfg.lambda = (-(cfg.log_cover + 3f64.ln())).exp();
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii_parse_and_expand() {
        let r: RadiiSpec = "0.05:0.5:log10".parse().unwrap();
        let v = r.values();
        assert_eq!(v.len(), DEFAULT_RADII_COUNT);
        assert!((v[0] - 0.05).abs() < 1e-15 && (v[7] - 0.5).abs() < 1e-12);
        let lin: RadiiSpec = "1:2:lin:3".parse().unwrap();
        assert_eq!(lin.values(), vec![1.0, 1.5, 2.0]);
        assert!("0:1:lin".parse::<RadiiSpec>().is_err());
        assert!("1:2:cubic".parse::<RadiiSpec>().is_err());
        assert!("1:2".parse::<RadiiSpec>().is_err());
    }
}
