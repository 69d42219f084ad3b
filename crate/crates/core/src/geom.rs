//! Distance and intersection primitives for points, segments and triangles.
//!
//! Distance routines work in any ambient dimension; the intersection tests
//! assume `R^3`.

use crate::linalg::{cross3, dot, sub};

/// Parameter `t` in `[0, 1]` of the point of `[a, b]` closest to `p`, and the squared distance.
pub fn closest_on_segment(p: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let d = sub(b, a);
    let dd = dot(&d, &d);
    let t = if dd == 0.0 {
        0.0
    } else {
        (dot(&sub(p, a), &d) / dd).clamp(0.0, 1.0)
    };
    let d2 = p
        .iter()
        .zip(a.iter().zip(&d))
        .map(|(pi, (ai, di))| {
            let r = pi - ai - t * di;
            r * r
        })
        .sum();
    (t, d2)
}

pub fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    closest_on_segment(p, a, b).1.sqrt()
}

/// Distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_segment_distance(p1: &[f64], q1: &[f64], p2: &[f64], q2: &[f64]) -> f64 {
    let d1 = sub(q1, p1);
    let d2 = sub(q2, p2);
    let r = sub(p1, p2);
    let a = dot(&d1, &d1);
    let e = dot(&d2, &d2);
    let f = dot(&d2, &r);
    let (s, t);
    if a <= f64::MIN_POSITIVE && e <= f64::MIN_POSITIVE {
        return crate::linalg::dist(p1, p2);
    }
    if a <= f64::MIN_POSITIVE {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(&d1, &r);
        if e <= f64::MIN_POSITIVE {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(&d1, &d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    p1.iter()
        .zip(&d1)
        .zip(p2.iter().zip(&d2))
        .map(|((a1, b1), (a2, b2))| {
            let r = (a1 + s * b1) - (a2 + t * b2);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Distance from `p` to the triangle `abc` (any dimension).
pub fn point_triangle_distance(p: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return crate::linalg::dist(p, a);
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return crate::linalg::dist(p, b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return point_segment_distance(p, a, b);
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return crate::linalg::dist(p, c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return point_segment_distance(p, a, c);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return point_segment_distance(p, b, c);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    p.iter()
        .enumerate()
        .map(|(k, pk)| {
            let q = a[k] + v * ab[k] + w * ac[k];
            (pk - q) * (pk - q)
        })
        .sum::<f64>()
        .sqrt()
}

/// Outcome of a segment/triangle intersection test in `R^3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Crossing {
    Miss,
    Hit,
    /// The configuration is within tolerance of a degenerate case (edge, vertex,
    /// endpoint or coplanar contact) and the answer is not robust.
    Degenerate,
}

/// Tolerance used by [`segment_triangle`] to detect near-degenerate crossings.
pub const CROSSING_TOL: f64 = 1e-12;

/// Moller-Trumbore test of the closed segment `[p, q]` against triangle `abc`.
pub fn segment_triangle(p: &[f64], q: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> Crossing {
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let dir = sub(q, p);
    let h = cross3(&dir, &e2);
    let det = dot(&e1, &h);
    let scale = crate::linalg::norm(&e1) * crate::linalg::norm(&e2) * crate::linalg::norm(&dir);
    if scale == 0.0 {
        return Crossing::Degenerate;
    }
    if det.abs() <= CROSSING_TOL * scale {
        // parallel: a hit is only possible in the coplanar case
        let n = cross3(&e1, &e2);
        let nn = crate::linalg::norm(&n);
        let off = dot(&n, &sub(p, a)).abs() / nn.max(f64::MIN_POSITIVE);
        let span = crate::linalg::norm(&e1).max(crate::linalg::norm(&e2));
        return if off <= CROSSING_TOL * span {
            Crossing::Degenerate
        } else {
            Crossing::Miss
        };
    }
    let inv = 1.0 / det;
    let s = sub(p, a);
    let u = dot(&s, &h) * inv;
    let qv = cross3(&s, &e1);
    let v = dot(&dir, &qv) * inv;
    let t = dot(&e2, &qv) * inv;
    let w = 1.0 - u - v;
    let tol = CROSSING_TOL;
    let near = |x: f64| x.abs() <= tol;
    if u < -tol || v < -tol || w < -tol || t < -tol || t > 1.0 + tol {
        return Crossing::Miss;
    }
    if near(u) || near(v) || near(w) || near(t) || near(t - 1.0) {
        return Crossing::Degenerate;
    }
    Crossing::Hit
}

/// Distance between segment `[p, q]` and triangle `abc` in `R^3`.
pub fn segment_triangle_distance(p: &[f64], q: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    // degenerate configurations fall through to the exact sub-distances
    if segment_triangle(p, q, a, b, c) == Crossing::Hit {
        return 0.0;
    }
    let mut d = point_triangle_distance(p, a, b, c).min(point_triangle_distance(q, a, b, c));
    for (x, y) in [(a, b), (b, c), (c, a)] {
        d = d.min(segment_segment_distance(p, q, x, y));
    }
    d
}

/// Distance between two triangles in `R^3` (0 when they cross).
pub fn triangle_triangle_distance(t1: [&[f64]; 3], t2: [&[f64]; 3]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..3 {
        let (p, q) = (t1[i], t1[(i + 1) % 3]);
        d = d.min(segment_triangle_distance(p, q, t2[0], t2[1], t2[2]));
        let (p, q) = (t2[i], t2[(i + 1) % 3]);
        d = d.min(segment_triangle_distance(p, q, t1[0], t1[1], t1[2]));
    }
    d
}

/// Signed area of the intersection of the disk `|z| <= r` with the triangle `(0, a, b)`.
pub fn disk_triangle_signed_area(a: [f64; 2], b: [f64; 2], r: f64) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let qa = d[0] * d[0] + d[1] * d[1];
    let mut cuts: Vec<[f64; 2]> = vec![a];
    if qa > 0.0 {
        let qb = 2.0 * (a[0] * d[0] + a[1] * d[1]);
        let qc = a[0] * a[0] + a[1] * a[1] - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc > 0.0 {
            let sq = disc.sqrt();
            // numerically stable roots
            let k = -0.5 * (qb + qb.signum() * sq);
            let (mut t1, mut t2) = if k != 0.0 { (k / qa, qc / k) } else { (0.0, 0.0) };
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            for t in [t1, t2] {
                if t > 0.0 && t < 1.0 {
                    cuts.push([a[0] + t * d[0], a[1] + t * d[1]]);
                }
            }
        }
    }
    cuts.push(b);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (p, q) = (w[0], w[1]);
        let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        let cross = p[0] * q[1] - p[1] * q[0];
        if mid[0] * mid[0] + mid[1] * mid[1] <= r * r {
            area += 0.5 * cross;
        } else {
            let ang = cross.atan2(p[0] * q[0] + p[1] * q[1]);
            area += 0.5 * r * r * ang;
        }
    }
    area
}

/// Area of the disk `B(c, r)` intersected with the triangle with vertices `v` (2D).
pub fn disk_triangle_area(c: [f64; 2], r: f64, v: [[f64; 2]; 3]) -> f64 {
    let rel = |p: [f64; 2]| [p[0] - c[0], p[1] - c[1]];
    let mut s = 0.0;
    for i in 0..3 {
        s += disk_triangle_signed_area(rel(v[i]), rel(v[(i + 1) % 3]), r);
    }
    s.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn segment_distances() {
        let d = segment_segment_distance(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.5, 1.0, 1.0], &[0.5, -1.0, 1.0]);
        assert!((d - 1.0).abs() < 1e-15);
        let d = segment_segment_distance(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_distances() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!((point_triangle_distance(&[0.2, 0.2, 3.0], &a, &b, &c) - 3.0).abs() < 1e-15);
        assert!((point_triangle_distance(&[-1.0, 0.0, 0.0], &a, &b, &c) - 1.0).abs() < 1e-15);
        assert!((point_triangle_distance(&[1.0, 1.0, 0.0], &a, &b, &c) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn crossings() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let hit = segment_triangle(&[0.2, 0.2, -1.0], &[0.2, 0.2, 1.0], &a, &b, &c);
        assert_eq!(hit, Crossing::Hit);
        let miss = segment_triangle(&[2.0, 2.0, -1.0], &[2.0, 2.0, 1.0], &a, &b, &c);
        assert_eq!(miss, Crossing::Miss);
        let edge = segment_triangle(&[0.5, 0.0, -1.0], &[0.5, 0.0, 1.0], &a, &b, &c);
        assert_eq!(edge, Crossing::Degenerate);
        let short = segment_triangle(&[0.2, 0.2, 1.0], &[0.2, 0.2, 2.0], &a, &b, &c);
        assert_eq!(short, Crossing::Miss);
    }

    #[test]
    fn disk_triangle_areas() {
        // triangle containing the disk
        let big = [[-10.0, -10.0], [10.0, -10.0], [0.0, 10.0]];
        assert!((disk_triangle_area([0.0, 0.0], 1.0, big) - PI).abs() < 1e-13);
        // disk containing the triangle
        let small = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]];
        assert!((disk_triangle_area([0.0, 0.0], 1.0, small) - 0.005).abs() < 1e-15);
        // quarter disk
        let quad = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        assert!((disk_triangle_area([0.0, 0.0], 1.0, quad) - PI / 4.0).abs() < 1e-13);
        // far away
        assert_eq!(disk_triangle_area([50.0, 0.0], 1.0, small), 0.0);
    }

    #[test]
    fn half_disk_against_sampling() {
        let tri = [[0.0, -5.0], [5.0, 5.0], [0.0, 5.0]];
        let exact = disk_triangle_area([0.0, 0.0], 1.0, tri);
        let k = 1000;
        let mut hits = 0;
        for i in 0..k {
            for j in 0..k {
                let x = -1.0 + 2.0 * (i as f64 + 0.5) / k as f64;
                let y = -1.0 + 2.0 * (j as f64 + 0.5) / k as f64;
                if x * x + y * y <= 1.0 && x >= 0.0 && y >= -5.0 + 2.0 * x && x <= 5.0 {
                    hits += 1;
                }
            }
        }
        let est = hits as f64 * 4.0 / (k * k) as f64;
        assert!((exact - est).abs() < 2e-3, "{exact} vs {est}");
    }
}
