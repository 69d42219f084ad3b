//! Analytic test shapes: polygons, icospheres, disks, tori, surfaces of
//! revolution and a few constructed counterexamples.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complex::SimplicialSet;
use crate::error::{Error, Result};

/// Regular `segments`-gon inscribed in the circle of radius `rho` in `R^2`.
pub fn circle(segments: usize, rho: f64) -> Result<SimplicialSet> {
    circle_in(segments, rho, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0])
}

/// Regular polygon inscribed in the circle `center + rho (cos t e1 + sin t e2)`.
pub fn circle_in(segments: usize, rho: f64, center: &[f64], e1: &[f64], e2: &[f64]) -> Result<SimplicialSet> {
    if segments < 3 {
        return Err(Error::invalid("a polygon needs at least three segments"));
    }
    let n = center.len();
    let mut v = Vec::with_capacity(segments * n);
    for k in 0..segments {
        let t = 2.0 * PI * k as f64 / segments as f64;
        let (s, c) = t.sin_cos();
        for i in 0..n {
            v.push(center[i] + rho * (c * e1[i] + s * e2[i]));
        }
    }
    let s: Vec<usize> = (0..segments).flat_map(|k| [k, (k + 1) % segments]).collect();
    SimplicialSet::new(n, 1, v, s)
}

/// Regular polygon with each vertex moved radially by a uniform factor in `[1 - noise, 1 + noise]`.
pub fn perturbed_circle(segments: usize, rho: f64, noise: f64, seed: u64) -> Result<SimplicialSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = circle(segments, rho)?;
    let v: Vec<f64> = base
        .vertices()
        .chunks(2)
        .flat_map(|p| {
            let f = 1.0 + noise * (2.0 * rng.random::<f64>() - 1.0);
            [p[0] * f, p[1] * f]
        })
        .collect();
    base.with_vertices(v)
}

fn icosahedron() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (v, f)
}

fn to_set(v: &[[f64; 3]], f: &[[usize; 3]]) -> Result<SimplicialSet> {
    SimplicialSet::new(3, 2, v.iter().flatten().copied().collect(), f.iter().flatten().copied().collect())
}

/// Icosahedron with vertices on the sphere of radius `radius`, midpoint-subdivided
/// `refinement` times and re-projected (`20 * 4^refinement` faces).
pub fn icosphere(refinement: usize, radius: f64) -> Result<SimplicialSet> {
    let (mut v, mut f) = icosahedron();
    let project = |p: [f64; 3]| {
        let l = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        [p[0] / l, p[1] / l, p[2] / l]
    };
    v.iter_mut().for_each(|p| *p = project(*p));
    for _ in 0..refinement {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut nf = Vec::with_capacity(f.len() * 4);
        let mut mid = |a: usize, b: usize, v: &mut Vec<[f64; 3]>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let p = [(v[a][0] + v[b][0]) / 2.0, (v[a][1] + v[b][1]) / 2.0, (v[a][2] + v[b][2]) / 2.0];
                v.push(project(p));
                v.len() - 1
            })
        };
        for &[a, b, c] in &f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            nf.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = nf;
    }
    let v: Vec<[f64; 3]> = v.iter().map(|p| [p[0] * radius, p[1] * radius, p[2] * radius]).collect();
    to_set(&v, &f)
}

/// Icosahedron with edge length 2 (circumradius `sqrt(phi^2 + 1)`).
pub fn icosahedron_mesh() -> Result<SimplicialSet> {
    let (v, f) = icosahedron();
    to_set(&v, &f)
}

/// Icosahedron inscribed in the unit sphere with every vertex displaced by up to `noise`.
pub fn perturbed_icosahedron(noise: f64, seed: u64) -> Result<SimplicialSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, f) = icosahedron();
    let l = v[0].iter().map(|x| x * x).sum::<f64>().sqrt();
    let v: Vec<[f64; 3]> = v
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for k in 0..3 {
                q[k] = p[k] / l + noise * (2.0 * rng.random::<f64>() - 1.0);
            }
            q
        })
        .collect();
    to_set(&v, &f)
}

/// Planar disk of radius `radius` in the `z = 0` plane of `R^3`, built from
/// `rings` concentric rings with `6k` vertices on ring `k` (`6 rings^2` triangles).
pub fn flat_disk(radius: f64, rings: usize) -> Result<SimplicialSet> {
    flat_disk_at(radius, rings, 0.0)
}

fn flat_disk_at(radius: f64, rings: usize, z: f64) -> Result<SimplicialSet> {
    if rings == 0 {
        return Err(Error::invalid("disk needs at least one ring"));
    }
    let mut v = vec![0.0, 0.0, z];
    let mut ring_start = vec![0usize];
    let mut ring_len = vec![1usize];
    for k in 1..=rings {
        ring_start.push(v.len() / 3);
        ring_len.push(6 * k);
        let r = radius * k as f64 / rings as f64;
        for j in 0..6 * k {
            let t = 2.0 * PI * j as f64 / (6 * k) as f64;
            v.extend([r * t.cos(), r * t.sin(), z]);
        }
    }
    let mut s = Vec::new();
    for k in 1..=rings {
        stitch_rings(&mut s, (ring_start[k - 1], ring_len[k - 1]), (ring_start[k], ring_len[k]));
    }
    SimplicialSet::new(3, 2, v, s)
}

/// Triangulates the band between two closed rings whose vertices are evenly
/// spaced in angle starting at angle 0 (a ring of length 1 is a pole).
fn stitch_rings(out: &mut Vec<usize>, inner: (usize, usize), outer: (usize, usize)) {
    let (a0, na) = inner;
    let (b0, nb) = outer;
    let (mut i, mut j) = (0usize, 0usize);
    let inner_steps = if na == 1 { 0 } else { na };
    while i < inner_steps || j < nb {
        let ta = if na == 1 { f64::INFINITY } else { (i + 1) as f64 / na as f64 };
        let tb = (j + 1) as f64 / nb as f64;
        let ai = a0 + i % na;
        let bj = b0 + j % nb;
        if j < nb && (tb <= ta || i >= inner_steps) {
            out.extend([ai, bj, b0 + (j + 1) % nb]);
            j += 1;
        } else {
            out.extend([ai, bj, a0 + (i + 1) % na]);
            i += 1;
        }
    }
}

/// Two parallel disks `z = 0` and `z = gap`.
pub fn parallel_disks(radius: f64, rings: usize, gap: f64) -> Result<SimplicialSet> {
    flat_disk_at(radius, rings, 0.0)?.union(&flat_disk_at(radius, rings, gap)?)
}

/// Unit square `[0,1]^2` in `R^3` as two triangles.
pub fn unit_square() -> Result<SimplicialSet> {
    SimplicialSet::new(
        3,
        2,
        vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        vec![0, 1, 2, 0, 2, 3],
    )
}

/// Torus of revolution about the `z` axis with radii `big > small`.
pub fn torus(big: f64, small: f64, nu: usize, nv: usize) -> Result<SimplicialSet> {
    if !(big > small && small > 0.0) || nu < 3 || nv < 3 {
        return Err(Error::invalid("torus needs big > small > 0 and at least 3 divisions"));
    }
    let mut v = Vec::with_capacity(nu * nv * 3);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let w = 2.0 * PI * j as f64 / nv as f64;
            let r = big + small * w.cos();
            v.extend([r * u.cos(), r * u.sin(), small * w.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut s = Vec::with_capacity(nu * nv * 6);
    for i in 0..nu {
        for j in 0..nv {
            s.extend([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            s.extend([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    SimplicialSet::new(3, 2, v, s)
}

/// Clifford torus `(cos u, sin u, cos v, sin v) / sqrt(2)` padded with zeros to `R^n`, `n >= 4`.
pub fn clifford_torus(nu: usize, nv: usize, n: usize) -> Result<SimplicialSet> {
    if n < 4 {
        return Err(Error::invalid("the Clifford torus lives in R^4 or higher"));
    }
    let h = 0.5f64.sqrt();
    let mut v = Vec::with_capacity(nu * nv * n);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let w = 2.0 * PI * j as f64 / nv as f64;
            v.extend([h * u.cos(), h * u.sin(), h * w.cos(), h * w.sin()]);
            v.extend(std::iter::repeat(0.0).take(n - 4));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut s = Vec::new();
    for i in 0..nu {
        for j in 0..nv {
            s.extend([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            s.extend([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    SimplicialSet::new(n, 2, v, s)
}

/// Closed surface of revolution about the `z` axis. `profile` lists `(r, z)`
/// from the bottom pole to the top pole; both ends must have `r = 0`.
pub fn revolve(profile: &[(f64, f64)], segments: usize) -> Result<SimplicialSet> {
    if profile.len() < 3 || profile[0].0 != 0.0 || profile[profile.len() - 1].0 != 0.0 {
        return Err(Error::invalid("profile must start and end on the axis"));
    }
    if segments < 3 {
        return Err(Error::invalid("need at least three segments"));
    }
    let mut v = Vec::new();
    let mut rings = Vec::new();
    for (k, &(r, z)) in profile.iter().enumerate() {
        let start = v.len() / 3;
        if k == 0 || k == profile.len() - 1 {
            v.extend([0.0, 0.0, z]);
            rings.push((start, 1));
        } else {
            for j in 0..segments {
                let t = 2.0 * PI * j as f64 / segments as f64;
                v.extend([r * t.cos(), r * t.sin(), z]);
            }
            rings.push((start, segments));
        }
    }
    let mut s = Vec::new();
    for k in 1..rings.len() {
        if rings[k].1 == 1 {
            // closing fan onto the top pole
            let (a0, na) = rings[k - 1];
            let p = rings[k].0;
            for i in 0..na {
                s.extend([a0 + i, a0 + (i + 1) % na, p]);
            }
        } else {
            stitch_rings(&mut s, rings[k - 1], rings[k]);
        }
    }
    SimplicialSet::new(3, 2, v, s)
}

/// Cylinder of radius `radius` and length `length` closed by two hemispherical
/// caps. `resolution` is the target edge length along the profile.
pub fn capsule(radius: f64, length: f64, segments: usize, resolution: f64) -> Result<SimplicialSet> {
    let cap_steps = ((PI / 2.0 * radius) / resolution).ceil().max(2.0) as usize;
    let body_steps = (length / resolution).ceil().max(1.0) as usize;
    let mut profile = Vec::new();
    for k in 0..=cap_steps {
        let a = -PI / 2.0 + PI / 2.0 * k as f64 / cap_steps as f64;
        profile.push((radius * a.cos(), radius * a.sin()));
    }
    for k in 1..body_steps {
        profile.push((radius, length * k as f64 / body_steps as f64));
    }
    for k in 0..=cap_steps {
        let a = PI / 2.0 * k as f64 / cap_steps as f64;
        profile.push((radius * a.cos(), length + radius * a.sin()));
    }
    profile[0].0 = 0.0;
    let last = profile.len() - 1;
    profile[last].0 = 0.0;
    revolve(&profile, segments)
}

/// A thin tube of radius `0.01` and length `1` with round ends.
pub fn thin_finger() -> Result<SimplicialSet> {
    capsule(0.01, 1.0, 12, 0.004)
}

/// Cone of half-angle `half_angle` with apex at the origin, closed smoothly by
/// a sphere of radius `cap_radius` tangent to it. The cone part from the apex
/// to the tangency circle (slant length `T`) is resolved by `bands` dyadic bands
/// `[T 2^{-k-1}, T 2^{-k}]` with three rings each; the apex is a single vertex.
pub fn teardrop(half_angle: f64, cap_radius: f64, bands: usize, segments: usize) -> Result<SimplicialSet> {
    let (s, c) = half_angle.sin_cos();
    let center = cap_radius / s;
    let slant = center * c;
    let mut profile = vec![(0.0, 0.0)];
    let per_band = 3;
    for j in (0..per_band * bands).rev() {
        let t = slant * 2f64.powf(-(j as f64 + 1.0) / per_band as f64);
        profile.push((t * s, t * c));
    }
    profile.push((slant * s, slant * c));
    push_cap(&mut profile, center, cap_radius, PI / 2.0 + half_angle, slant * (1.0 - 2f64.powf(-1.0 / 3.0)));
    revolve(&profile, segments)
}

/// The smooth control for [`teardrop`]: the cone part is cut at slant `T 2^{-cut_bands}`
/// and closed by a small sphere tangent to the cone, whose profile is resolved with
/// `tip_rings` rings. The cone part keeps the same dyadic rings as `teardrop(.., cut_bands, ..)`.
pub fn rounded_teardrop(half_angle: f64, cap_radius: f64, cut_bands: usize, tip_rings: usize, segments: usize) -> Result<SimplicialSet> {
    let (s, c) = half_angle.sin_cos();
    let center = cap_radius / s;
    let slant = center * c;
    let per_band = 3;
    let t_cut = slant * 2f64.powf(-(cut_bands as f64));
    // tip sphere tangent to the cone at slant t_cut
    let tip_r = t_cut * s / c;
    let tip_center = t_cut / c;
    let mut profile = vec![(0.0, tip_center - tip_r)];
    // bottom pole to the tangency circle: polar angle from the bottom runs 0..(pi/2 - half_angle)
    let span = PI / 2.0 - half_angle;
    for k in 1..tip_rings {
        let a = span * k as f64 / tip_rings as f64;
        profile.push((tip_r * a.sin(), tip_center - tip_r * a.cos()));
    }
    for j in (0..=per_band * cut_bands).rev() {
        let t = slant * 2f64.powf(-(j as f64) / per_band as f64);
        profile.push((t * s, t * c));
    }
    push_cap(&mut profile, center, cap_radius, PI / 2.0 + half_angle, slant * (1.0 - 2f64.powf(-1.0 / 3.0)));
    revolve(&profile, segments)
}

/// Appends the arc of the sphere `(R sin a, center + R cos a)` from polar angle
/// `from` (exclusive) to the top pole, with step close to `step`.
fn push_cap(profile: &mut Vec<(f64, f64)>, center: f64, radius: f64, from: f64, step: f64) {
    let steps = ((from * radius) / step).ceil().max(2.0) as usize;
    for k in 1..=steps {
        let a = from * (1.0 - k as f64 / steps as f64);
        let r = if k == steps { 0.0 } else { radius * a.sin() };
        profile.push((r, center + radius * a.cos()));
    }
}

/// Two unit icospheres whose surfaces are `gap` apart along the `x` axis.
pub fn sphere_pair(refinement: usize, gap: f64) -> Result<SimplicialSet> {
    let a = icosphere(refinement, 1.0)?;
    let b = a.map_vertices(|p| vec![p[0] + 2.0 + gap, p[1], p[2]])?;
    a.union(&b)
}

/// The two circles of a Hopf link: unit circles in the `xy` plane at the
/// origin and in the `xz` plane centered at `(1, 0, 0)`.
pub fn hopf_link(segments: usize) -> Result<(SimplicialSet, SimplicialSet)> {
    let a = circle_in(segments, 1.0, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0])?;
    let b = circle_in(segments, 1.0, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0])?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let s = icosphere(2, 1.0).unwrap();
        assert_eq!(s.num_simplices(), 320);
        assert_eq!(s.num_vertices(), 162);
        let a = icosahedron_mesh().unwrap();
        // edge length 2: area 5 sqrt(3) a^2
        assert!((a.total_measure() - 20.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn disk_area_converges() {
        let d = flat_disk(1.0, 40).unwrap();
        assert_eq!(d.num_simplices(), 6 * 40 * 40);
        assert!((d.total_measure() - PI).abs() < 2e-3);
    }

    #[test]
    fn revolved_shapes_are_valid() {
        let c = capsule(0.5, 2.0, 24, 0.1).unwrap();
        let exact = 4.0 * PI * 0.25 + 2.0 * PI * 0.5 * 2.0;
        assert!((c.total_measure() - exact).abs() < 0.02 * exact);
        let t = teardrop(0.35, 0.5, 6, 24).unwrap();
        assert!(t.total_measure() > 0.0);
        let r = rounded_teardrop(0.35, 0.5, 3, 6, 24).unwrap();
        assert!(r.total_measure() > 0.0);
        assert!(thin_finger().unwrap().total_measure() > 0.06);
    }

    #[test]
    fn torus_area() {
        let t = torus(2.0, 0.5, 80, 40).unwrap();
        let exact = 4.0 * PI * PI * 2.0 * 0.5;
        assert!((t.total_measure() - exact).abs() < 0.01 * exact);
    }
}
