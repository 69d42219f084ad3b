use clap::{Args, ValueEnum};
use tpsurf_core::{shapes, SimplicialSet};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    Circle,
    PerturbedCircle,
    Icosphere,
    Torus,
    CliffordTorus,
    FlatDisk,
    ParallelDisks,
    Capsule,
    ThinFinger,
    Teardrop,
    RoundedTeardrop,
    SpherePair,
    HopfA,
    HopfB,
}

#[derive(Args, Clone, Debug)]
pub struct FixtureArgs {
    #[arg(value_enum)]
    pub shape: Fixture,
    /// Output mesh (.obj or .ndmesh)
    pub output: std::path::PathBuf,
    /// Refinement level (icosphere, sphere pair, teardrops)
    #[arg(long, default_value_t = 3)]
    pub level: usize,
    /// Segments of curves and rotational surfaces
    #[arg(long, default_value_t = 64)]
    pub segments: usize,
    /// Gap between the two parts of a disk or sphere pair
    #[arg(long, default_value_t = 0.3)]
    pub gap: f64,
    /// Relative radial noise of the perturbed circle
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn build(args: &FixtureArgs) -> Result<SimplicialSet> {
    let s = args.segments;
    let set = match args.shape {
        Fixture::Circle => shapes::circle(s, 1.0)?,
        Fixture::PerturbedCircle => shapes::perturbed_circle(s, 1.0, args.noise, args.seed)?,
        Fixture::Icosphere => shapes::icosphere(args.level, 1.0)?,
        Fixture::Torus => shapes::torus(1.0, 0.4, s, (s / 2).max(3))?,
        Fixture::CliffordTorus => shapes::clifford_torus(s, s, 4)?,
        Fixture::FlatDisk => shapes::flat_disk(1.0, (s / 4).max(1))?,
        Fixture::ParallelDisks => shapes::parallel_disks(1.0, (s / 4).max(1), args.gap)?,
        Fixture::Capsule => shapes::capsule(0.5, 2.0, s, 0.08)?,
        Fixture::ThinFinger => shapes::thin_finger()?,
        Fixture::Teardrop => shapes::teardrop(0.5, 1.0, 8 << args.level, s)?,
        Fixture::RoundedTeardrop => shapes::rounded_teardrop(0.5, 1.0, 3, 3 << args.level, s)?,
        Fixture::SpherePair => shapes::sphere_pair(args.level, args.gap)?,
        Fixture::HopfA => shapes::hopf_link(s)?.0,
        Fixture::HopfB => shapes::hopf_link(s)?.1,
    };
    Ok(set)
}
