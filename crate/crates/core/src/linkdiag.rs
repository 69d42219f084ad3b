//! Linking parity of a complex with small probe spheres, for curves and
//! surfaces in `R^3`, and trapping-box checks built on it.
//!
//! Parity is computed by intersection counting: for a closed curve, the
//! number of curve segments crossing a fan triangulation of the probe
//! polygon; for a closed surface, the number of triangles crossed by the
//! segment joining the two probe points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{QuadratureCloud, SimplicialSet};
use crate::error::{Error, Result};
use crate::geom::{point_triangle_distance, segment_segment_distance, segment_triangle, segment_triangle_distance, Crossing};
use crate::grassmann::Plane;
use crate::linalg::{axpy, dist, sub};

/// Relative jitter applied to a probe when an intersection test is degenerate.
pub const JITTER: f64 = 1e-9;
pub const MAX_RETRIES: usize = 8;
/// Probes closer than this fraction of the diameter to the set are rejected.
pub const CLEARANCE: f64 = 1e-9;

/// The round sphere `center + {v in V : |v| = radius}` and its polygonal stand-in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphereProbe {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `V`, of dimension `n - m`
    pub plane: Plane,
    /// polygon size used when `V` is two-dimensional
    pub segments: usize,
}

impl SphereProbe {
    pub fn new(center: Vec<f64>, radius: f64, plane: Plane, segments: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid("probe radius must be positive"));
        }
        if center.len() != plane.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: plane.ambient_dim(),
                found: center.len(),
            });
        }
        if plane.dim() == 2 && segments < 3 {
            return Err(Error::invalid("probe polygon needs at least three segments"));
        }
        Ok(SphereProbe {
            center,
            radius,
            plane,
            segments,
        })
    }

    /// Vertices of the polygonal sphere: a `segments`-gon when `dim V = 2`,
    /// the two points `center ± radius v` when `dim V = 1`.
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self.plane.dim() {
            1 => {
                let v = self.plane.basis(0);
                let mut a = self.center.clone();
                axpy(&mut a, -self.radius, v);
                let mut b = self.center.clone();
                axpy(&mut b, self.radius, v);
                vec![a, b]
            }
            _ => (0..self.segments)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / self.segments as f64;
                    let mut p = self.center.clone();
                    axpy(&mut p, self.radius * t.cos(), self.plane.basis(0));
                    axpy(&mut p, self.radius * t.sin(), self.plane.basis(1));
                    p
                })
                .collect(),
        }
    }

    fn translated(&self, offset: &[f64]) -> SphereProbe {
        let mut p = self.clone();
        for (c, o) in p.center.iter_mut().zip(offset) {
            *c += o;
        }
        p
    }

    fn seed(&self) -> u64 {
        let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
        let bits = self
            .center
            .iter()
            .chain(std::iter::once(&self.radius))
            .chain(self.plane.frame())
            .map(|x| x.to_bits())
            .chain(std::iter::once(self.segments as u64));
        for b in bits {
            h = (h ^ b).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
        }
        h
    }
}

fn check_supported(set: &SimplicialSet) -> Result<()> {
    match (set.intrinsic_dim(), set.ambient_dim()) {
        (1, 3) | (2, 3) => Ok(()),
        (m, n) => Err(Error::Unsupported(format!(
            "linking parity is implemented for curves and surfaces in R^3, not m = {m}, n = {n}"
        ))),
    }
}

/// Distance between the polygonal probe and the set.
pub fn probe_distance(set: &SimplicialSet, probe: &SphereProbe) -> f64 {
    let pts = probe.points();
    (0..set.num_simplices())
        .into_par_iter()
        .map(|s| {
            let v = set.simplex_vertices(s);
            match set.intrinsic_dim() {
                1 => (0..pts.len())
                    .map(|k| segment_segment_distance(&pts[k], &pts[(k + 1) % pts.len()], v[0], v[1]))
                    .fold(f64::INFINITY, f64::min),
                _ => pts
                    .iter()
                    .map(|p| point_triangle_distance(p, v[0], v[1], v[2]))
                    .fold(f64::INFINITY, f64::min),
            }
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Crossing count of the probe's spanning disk with the set, or `None` if degenerate.
fn crossing_parity(set: &SimplicialSet, probe: &SphereProbe) -> Option<u8> {
    let pts = probe.points();
    let counts: Vec<Option<u32>> = (0..set.num_simplices())
        .into_par_iter()
        .map(|s| {
            let v = set.simplex_vertices(s);
            let mut c = 0u32;
            match set.intrinsic_dim() {
                1 => {
                    for k in 0..pts.len() {
                        let (a, b) = (&pts[k], &pts[(k + 1) % pts.len()]);
                        match segment_triangle(v[0], v[1], &probe.center, a, b) {
                            Crossing::Hit => c += 1,
                            Crossing::Miss => {}
                            Crossing::Degenerate => return None,
                        }
                    }
                }
                _ => match segment_triangle(&pts[0], &pts[1], v[0], v[1], v[2]) {
                    Crossing::Hit => c += 1,
                    Crossing::Miss => {}
                    Crossing::Degenerate => return None,
                },
            }
            Some(c)
        })
        .collect();
    let mut total = 0u32;
    for c in counts {
        total += c?;
    }
    Some((total % 2) as u8)
}

/// Linking number mod 2 of the set with the probe sphere.
pub fn linking_mod2(set: &SimplicialSet, probe: &SphereProbe) -> Result<u8> {
    check_supported(set)?;
    linking_with_diameter(set, probe, set.diameter())
}

fn linking_with_diameter(set: &SimplicialSet, probe: &SphereProbe, diam: f64) -> Result<u8> {
    let n = set.ambient_dim();
    if probe.center.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: probe.center.len(),
        });
    }
    if probe.plane.dim() != n - set.intrinsic_dim() {
        return Err(Error::invalid(format!(
            "probe plane must have dimension n - m = {}",
            n - set.intrinsic_dim()
        )));
    }
    let clearance = probe_distance(set, probe);
    if !(clearance > CLEARANCE * diam) {
        return Err(Error::pre(format!(
            "probe sphere is within {clearance:e} of the set (diameter {diam:e})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed());
    let mut current = probe.clone();
    for attempt in 0..=MAX_RETRIES {
        if let Some(p) = crossing_parity(set, &current) {
            if attempt > 0 {
                log::debug!("linking parity resolved after {attempt} jitters");
            }
            return Ok(p);
        }
        let dir: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let len = crate::linalg::norm(&dir).max(f64::MIN_POSITIVE);
        let offset: Vec<f64> = dir.iter().map(|x| x / len * JITTER * probe.radius * (attempt + 1) as f64).collect();
        current = probe.translated(&offset);
    }
    Err(Error::DegenerateConfiguration {
        retries: MAX_RETRIES,
        detail: format!("probe at {:?} radius {}", probe.center, probe.radius),
    })
}

/// Whether the flat disk spanned by the probe meets the set (distance test,
/// independent of crossing parity).
pub fn spanning_disk_meets(set: &SimplicialSet, probe: &SphereProbe, tol: f64) -> Result<bool> {
    check_supported(set)?;
    let pts = probe.points();
    let hit = (0..set.num_simplices()).into_par_iter().any(|s| {
        let v = set.simplex_vertices(s);
        match set.intrinsic_dim() {
            1 => (0..pts.len()).any(|k| {
                segment_triangle_distance(v[0], v[1], &probe.center, &pts[k], &pts[(k + 1) % pts.len()]) <= tol
            }),
            _ => segment_triangle_distance(&pts[0], &pts[1], v[0], v[1], v[2]) <= tol,
        }
    });
    Ok(hit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxShape {
    /// `F` is the cylinder of half-width `theta r` around `x + H`, united with `B(x, r/2)`.
    CylinderHalfBall,
    /// `F` is the cylinder only.
    Cylinder,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrappingBox {
    pub center: Vec<f64>,
    pub radius: f64,
    pub plane: Plane,
    pub theta: f64,
    pub shape: BoxShape,
}

impl TrappingBox {
    pub fn new(center: Vec<f64>, radius: f64, plane: Plane, theta: f64, shape: BoxShape) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid("box radius must be positive"));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::invalid("theta must lie in (0, 1)"));
        }
        if center.len() != plane.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: plane.ambient_dim(),
                found: center.len(),
            });
        }
        Ok(TrappingBox {
            center,
            radius,
            plane,
            theta,
            shape,
        })
    }

    /// Membership in `F` (for points of the closed ball).
    pub fn in_region(&self, y: &[f64]) -> bool {
        let d = sub(y, &self.center);
        if self.plane.normal_norm(&d) <= self.theta * self.radius {
            return true;
        }
        self.shape == BoxShape::CylinderHalfBall && dist(y, &self.center) <= self.radius / 2.0
    }

    /// Admissible probe radii `(lo, hi)` at `z` in `x + H`: spheres of radius
    /// `t` in `(lo, hi)` around `z` lie in the open ball but outside `F`.
    pub fn admissible_radii(&self, z: &[f64]) -> Option<(f64, f64)> {
        let s2 = crate::linalg::dist2(z, &self.center);
        let r = self.radius;
        let hi = (r * r - s2).max(0.0).sqrt();
        let mut lo = self.theta * r;
        if self.shape == BoxShape::CylinderHalfBall {
            lo = lo.max((r * r / 4.0 - s2).max(0.0).sqrt());
        }
        (lo < hi).then_some((lo, hi))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum TrapWitness {
    /// A point of the set inside the ball but outside the box.
    Escaped { point: Vec<f64>, height: f64 },
    /// A grid point with no admissible radius or with parity 0 at every tried radius.
    Unlinked { z: Vec<f64>, radii_tried: Vec<f64> },
    /// A probe that could not be evaluated.
    ProbeFailed { z: Vec<f64>, reason: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrappingReport {
    pub containment: bool,
    /// `None` when linking is not implemented for the dimensions.
    pub linking_ok: Option<bool>,
    pub grid_points: usize,
    pub witnesses: Vec<TrapWitness>,
}

/// Checks the containment and linking conditions of a trapping box.
pub fn check_trapping_box(
    set: &SimplicialSet,
    cloud: &QuadratureCloud,
    tbox: &TrappingBox,
    probe_grid: usize,
    probe_segments: usize,
) -> Result<TrappingReport> {
    let n = set.ambient_dim();
    let m = set.intrinsic_dim();
    if tbox.center.len() != n || tbox.plane.dim() != m {
        return Err(Error::invalid("box plane must be an m-plane in the ambient space of the set"));
    }
    let mut witnesses = Vec::new();
    let r2 = tbox.radius * tbox.radius;
    let mut candidates: Vec<Vec<f64>> = (0..cloud.len()).map(|i| cloud.position(i).to_vec()).collect();
    candidates.extend((0..set.num_vertices()).map(|v| set.vertex(v).to_vec()));
    for y in candidates {
        if crate::linalg::dist2(&y, &tbox.center) <= r2 && !tbox.in_region(&y) {
            let height = tbox.plane.normal_norm(&sub(&y, &tbox.center));
            witnesses.push(TrapWitness::Escaped { point: y, height });
        }
    }
    let containment = witnesses.is_empty();

    if check_supported(set).is_err() {
        return Ok(TrappingReport {
            containment,
            linking_ok: None,
            grid_points: 0,
            witnesses,
        });
    }
    let normal = tbox.plane.complement()?;
    let reach = (1.0 - tbox.theta * tbox.theta).sqrt() * tbox.radius;
    let k = probe_grid.max(1);
    let mut grid = Vec::new();
    let mut idx = vec![0usize; m];
    'outer: loop {
        let coords: Vec<f64> = idx
            .iter()
            .map(|&i| if k == 1 { 0.0 } else { -reach + 2.0 * reach * i as f64 / (k - 1) as f64 })
            .collect();
        if coords.iter().map(|c| c * c).sum::<f64>().sqrt() < reach {
            let mut z = tbox.center.clone();
            for (a, c) in coords.iter().enumerate() {
                axpy(&mut z, *c, tbox.plane.basis(a));
            }
            grid.push(z);
        }
        for d in 0..m {
            idx[d] += 1;
            if idx[d] < k {
                continue 'outer;
            }
            idx[d] = 0;
        }
        break;
    }
    let diam = set.diameter();
    let mut linking_ok = true;
    for z in &grid {
        let Some((lo, hi)) = tbox.admissible_radii(z) else {
            linking_ok = false;
            witnesses.push(TrapWitness::Unlinked {
                z: z.clone(),
                radii_tried: Vec::new(),
            });
            continue;
        };
        // midpoint first, then other interior radii
        let fractions = [0.5, 0.25, 0.75, 0.1, 0.9];
        let mut tried = Vec::new();
        let mut linked = false;
        let mut failure = None;
        for f in fractions {
            let t = lo + f * (hi - lo);
            tried.push(t);
            let probe = SphereProbe::new(z.clone(), t, normal.clone(), probe_segments)?;
            match linking_with_diameter(set, &probe, diam) {
                Ok(1) => {
                    linked = true;
                    break;
                }
                Ok(_) => {}
                Err(e) => failure = Some(e.to_string()),
            }
        }
        if !linked {
            linking_ok = false;
            match failure {
                Some(reason) if tried.len() == fractions.len() => witnesses.push(TrapWitness::ProbeFailed { z: z.clone(), reason }),
                _ => witnesses.push(TrapWitness::Unlinked {
                    z: z.clone(),
                    radii_tried: tried,
                }),
            }
        }
    }
    Ok(TrappingReport {
        containment,
        linking_ok: Some(linking_ok),
        grid_points: grid.len(),
        witnesses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn probe_points_lie_on_sphere() {
        let v = Plane::span(3, &[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let p = SphereProbe::new(vec![0.3, -0.2, 1.0], 0.7, v.clone(), 17).unwrap();
        for q in p.points() {
            assert!((dist(&q, &p.center) - 0.7).abs() < 1e-12);
            assert!(v.normal_norm(&sub(&q, &p.center)) < 1e-12);
        }
    }

    #[test]
    fn sphere_and_zero_sphere() {
        let s = shapes::icosphere(2, 1.0).unwrap();
        let x_axis = Plane::coordinate(3, &[0]).unwrap();
        // {origin, (3,0,0)}: center (1.5,0,0), radius 1.5
        let probe = SphereProbe::new(vec![1.5, 0.0, 0.0], 1.5, x_axis.clone(), 0).unwrap();
        assert_eq!(linking_mod2(&s, &probe).unwrap(), 1);
        let outside = SphereProbe::new(vec![5.0, 0.0, 0.0], 1.0, x_axis, 0).unwrap();
        assert_eq!(linking_mod2(&s, &outside).unwrap(), 0);
    }

    #[test]
    fn unsupported_dimensions() {
        let c = shapes::circle(8, 1.0).unwrap();
        let probe = SphereProbe::new(vec![0.0, 0.0], 0.5, Plane::coordinate(2, &[0]).unwrap(), 0).unwrap();
        assert!(matches!(linking_mod2(&c, &probe), Err(Error::Unsupported(_))));
    }

    #[test]
    fn touching_probe_is_rejected() {
        let s = shapes::icosphere(1, 1.0).unwrap();
        let v0 = s.vertex(0).to_vec();
        let probe = SphereProbe::new(v0.iter().map(|x| x * 0.5).collect(), crate::linalg::norm(&v0) * 0.5, Plane::span(3, &[v0.clone()]).unwrap(), 0).unwrap();
        assert!(matches!(linking_mod2(&s, &probe), Err(Error::Precondition(_))));
    }

    #[test]
    fn degenerate_crossing_is_jittered() {
        // the probe segment passes exactly through a mesh vertex
        let s = shapes::icosphere(1, 1.0).unwrap();
        let v0 = s.vertex(0).to_vec();
        let probe = SphereProbe::new(v0.clone(), 0.5, Plane::span(3, &[v0]).unwrap(), 0).unwrap();
        assert_eq!(linking_mod2(&s, &probe).unwrap(), 1);
    }

    #[test]
    fn flat_disk_trapping_box() {
        let d = shapes::flat_disk(1.0, 12).unwrap();
        let c = QuadratureCloud::centroid(&d);
        let h = Plane::coordinate(3, &[0, 1]).unwrap();
        let b = TrappingBox::new(vec![0.0, 0.0, 0.0], 0.5, h, 0.1, BoxShape::CylinderHalfBall).unwrap();
        let rep = check_trapping_box(&d, &c, &b, 5, 16).unwrap();
        assert!(rep.containment);
        assert_eq!(rep.linking_ok, Some(true));
        assert!(rep.grid_points > 5);
    }
}
