//! Simplicial `m`-complexes in `R^n`, their quadrature clouds, exact ball
//! measures and admissibility diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::disk_triangle_area;
use crate::grassmann::Plane;
use crate::linalg::{dist, dist2, dot, factorial, sub};

/// Simplices whose measure is at most this fraction of `diam^m` are rejected.
pub const DEGENERACY_TOL: f64 = 1e-14;

/// Smallest ball radius, relative to the longest edge, resolved directly.
pub const BALL_RESOLUTION: f64 = 1e-7;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimplicialSet {
    ambient_dim: usize,
    intrinsic_dim: usize,
    vertices: Vec<f64>,
    simplices: Vec<usize>,
    measures: Vec<f64>,
    planes: Vec<Plane>,
}

/// Measure and tangent plane of a single simplex given by its vertices.
pub fn simplex_geometry(n: usize, verts: &[&[f64]]) -> Result<(f64, Plane)> {
    let m = verts.len() - 1;
    let edges: Vec<Vec<f64>> = verts[1..].iter().map(|v| sub(v, verts[0])).collect();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            gram[(i, j)] = dot(&edges[i], &edges[j]);
        }
    }
    let det = match m {
        1 => gram[(0, 0)],
        2 => gram[(0, 0)] * gram[(1, 1)] - gram[(0, 1)] * gram[(1, 0)],
        _ => gram.determinant(),
    };
    let measure = det.max(0.0).sqrt() / factorial(m);
    let plane = Plane::span(n, &edges)?;
    Ok((measure, plane))
}

impl SimplicialSet {
    /// Builds and validates a complex. `vertices` holds `n` coordinates per
    /// vertex, `simplices` holds `m + 1` indices per simplex.
    pub fn new(n: usize, m: usize, vertices: Vec<f64>, simplices: Vec<usize>) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(Error::invalid(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
        }
        if vertices.len() % n != 0 {
            return Err(Error::invalid("vertex buffer length is not a multiple of n"));
        }
        if simplices.is_empty() || simplices.len() % (m + 1) != 0 {
            return Err(Error::invalid("simplex buffer must hold a positive multiple of m + 1 indices"));
        }
        if vertices.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vertex coordinate".into()));
        }
        let nv = vertices.len() / n;
        if let Some(&bad) = simplices.iter().find(|&&i| i >= nv) {
            return Err(Error::invalid(format!("vertex index {bad} out of range ({nv} vertices)")));
        }
        let mut measures = Vec::with_capacity(simplices.len() / (m + 1));
        let mut planes = Vec::with_capacity(simplices.len() / (m + 1));
        let mut degenerate = Vec::new();
        for (s, idx) in simplices.chunks(m + 1).enumerate() {
            let verts: Vec<&[f64]> = idx.iter().map(|&i| &vertices[i * n..(i + 1) * n]).collect();
            let mut diam: f64 = 0.0;
            for a in 0..verts.len() {
                for b in 0..a {
                    diam = diam.max(dist(verts[a], verts[b]));
                }
            }
            match simplex_geometry(n, &verts) {
                Ok((mu, plane)) if mu > DEGENERACY_TOL * diam.powi(m as i32) => {
                    measures.push(mu);
                    planes.push(plane);
                }
                _ => degenerate.push(s),
            }
        }
        if !degenerate.is_empty() {
            return Err(Error::DegenerateSimplices { indices: degenerate });
        }
        Ok(SimplicialSet {
            ambient_dim: n,
            intrinsic_dim: m,
            vertices,
            simplices,
            measures,
            planes,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len() / self.ambient_dim
    }

    pub fn num_simplices(&self) -> usize {
        self.measures.len()
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    pub fn simplices(&self) -> &[usize] {
        &self.simplices
    }

    pub fn simplex(&self, s: usize) -> &[usize] {
        let k = self.intrinsic_dim + 1;
        &self.simplices[s * k..(s + 1) * k]
    }

    pub fn simplex_vertices(&self, s: usize) -> Vec<&[f64]> {
        self.simplex(s).iter().map(|&i| self.vertex(i)).collect()
    }

    pub fn measure(&self, s: usize) -> f64 {
        self.measures[s]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn plane(&self, s: usize) -> &Plane {
        &self.planes[s]
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }

    pub fn centroid(&self, s: usize) -> Vec<f64> {
        let n = self.ambient_dim;
        let idx = self.simplex(s);
        let mut c = vec![0.0; n];
        for &i in idx {
            crate::linalg::axpy(&mut c, 1.0, self.vertex(i));
        }
        c.iter_mut().for_each(|x| *x /= idx.len() as f64);
        c
    }

    /// Exact vertex diameter (quadratic in the vertex count).
    pub fn diameter(&self) -> f64 {
        let nv = self.num_vertices();
        (0..nv)
            .into_par_iter()
            .map(|i| {
                let vi = self.vertex(i);
                (0..i).map(|j| dist2(vi, self.vertex(j))).fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
            .sqrt()
    }

    /// Longest edge over all simplices.
    pub fn max_edge(&self) -> f64 {
        (0..self.num_simplices())
            .map(|s| simplex_diameter(&self.simplex_vertices(s)))
            .fold(0.0, f64::max)
    }

    /// Mean edge length incident to each vertex.
    pub fn local_edge_lengths(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.num_vertices()];
        let mut cnt = vec![0usize; self.num_vertices()];
        for s in 0..self.num_simplices() {
            let idx = self.simplex(s);
            for a in 0..idx.len() {
                for b in 0..a {
                    let l = dist(self.vertex(idx[a]), self.vertex(idx[b]));
                    for v in [idx[a], idx[b]] {
                        sum[v] += l;
                        cnt[v] += 1;
                    }
                }
            }
        }
        sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
    }

    /// Replaces all vertex positions, keeping the connectivity.
    pub fn with_vertices(&self, vertices: Vec<f64>) -> Result<Self> {
        SimplicialSet::new(self.ambient_dim, self.intrinsic_dim, vertices, self.simplices.clone())
    }

    pub fn map_vertices<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Result<Self> {
        let v: Vec<f64> = self.vertices.chunks(self.ambient_dim).flat_map(f).collect();
        self.with_vertices(v)
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        self.map_vertices(|p| p.iter().map(|x| x * lambda).collect())
    }

    /// Applies `y = R x + t`.
    pub fn rigid_motion(&self, rotation: &DMatrix<f64>, translation: &[f64]) -> Result<Self> {
        let n = self.ambient_dim;
        self.map_vertices(|p| {
            (0..n)
                .map(|i| (0..n).map(|j| rotation[(i, j)] * p[j]).sum::<f64>() + translation[i])
                .collect()
        })
    }

    /// Disjoint union of two complexes with matching dimensions.
    pub fn union(&self, other: &SimplicialSet) -> Result<Self> {
        if self.ambient_dim != other.ambient_dim || self.intrinsic_dim != other.intrinsic_dim {
            return Err(Error::invalid("union of complexes with different dimensions"));
        }
        let off = self.num_vertices();
        let mut v = self.vertices.clone();
        v.extend_from_slice(&other.vertices);
        let mut s = self.simplices.clone();
        s.extend(other.simplices.iter().map(|i| i + off));
        SimplicialSet::new(self.ambient_dim, self.intrinsic_dim, v, s)
    }

    /// Connected-component label of every simplex (simplices sharing a vertex are connected).
    pub fn components(&self) -> Vec<usize> {
        let nv = self.num_vertices();
        let mut parent: Vec<usize> = (0..nv).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for s in 0..self.num_simplices() {
            let idx = self.simplex(s);
            for &j in &idx[1..] {
                let (a, b) = (find(&mut parent, idx[0]), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut labels = BTreeMap::new();
        (0..self.num_simplices())
            .map(|s| {
                let root = find(&mut parent, self.simplex(s)[0]);
                let next = labels.len();
                *labels.entry(root).or_insert(next)
            })
            .collect()
    }

    /// Simplices incident to each vertex.
    pub fn vertex_stars(&self) -> Vec<Vec<usize>> {
        let mut stars = vec![Vec::new(); self.num_vertices()];
        for s in 0..self.num_simplices() {
            for &v in self.simplex(s) {
                stars[v].push(s);
            }
        }
        stars
    }

    /// Shape quality in `(0, 1]`: volume relative to the regular simplex with
    /// the same longest edge.
    pub fn aspect(&self, s: usize) -> f64 {
        let m = self.intrinsic_dim;
        let l = simplex_diameter(&self.simplex_vertices(s));
        let regular = l.powi(m as i32) / factorial(m) * ((m as f64 + 1.0) / 2f64.powi(m as i32)).sqrt();
        self.measures[s] / regular
    }

    pub fn min_aspect(&self) -> f64 {
        (0..self.num_simplices()).map(|s| self.aspect(s)).fold(f64::INFINITY, f64::min)
    }

    /// `H^m(simplex s ∩ B(x, r))`: exact for `m <= 2`, otherwise 0/1 by centroid.
    pub fn simplex_ball_measure(&self, s: usize, x: &[f64], r: f64) -> f64 {
        let verts = self.simplex_vertices(s);
        let r2 = r * r;
        if verts.iter().all(|v| dist2(v, x) <= r2) {
            return self.measures[s];
        }
        match self.intrinsic_dim {
            1 => {
                let (a, b) = (verts[0], verts[1]);
                let d = sub(b, a);
                let dd = dot(&d, &d);
                let ax = sub(a, x);
                let pb = dot(&ax, &d);
                let pc = dot(&ax, &ax) - r2;
                let disc = pb * pb - dd * pc;
                if disc <= 0.0 {
                    return 0.0;
                }
                let sq = disc.sqrt();
                let t0 = ((-pb - sq) / dd).max(0.0);
                let t1 = ((-pb + sq) / dd).min(1.0);
                (t1 - t0).max(0.0) * dd.sqrt()
            }
            2 => {
                let plane = &self.planes[s];
                let rel = sub(x, verts[0]);
                let h = plane.normal_norm(&rel);
                if h >= r {
                    return 0.0;
                }
                let rho = (r2 - h * h).sqrt();
                let c = plane.coords(&rel);
                let to2 = |v: &[f64]| {
                    let q = plane.coords(&sub(v, verts[0]));
                    [q[0], q[1]]
                };
                let tri = [to2(verts[0]), to2(verts[1]), to2(verts[2])];
                disk_triangle_area([c[0], c[1]], rho, tri).min(self.measures[s])
            }
            _ => {
                if dist2(&self.centroid(s), x) <= r2 {
                    self.measures[s]
                } else {
                    0.0
                }
            }
        }
    }

    /// `H^m(Σ ∩ B(x, r))`. Exact for `m <= 2`; for `m >= 3` the measure of the
    /// simplices whose centroid lies in the ball.
    pub fn local_measure(&self, x: &[f64], r: f64) -> Result<f64> {
        self.local_measure_where(x, r, |_| true)
    }

    /// [`local_measure`](Self::local_measure) restricted to simplices accepted by `keep`.
    pub fn local_measure_where<F: Fn(usize) -> bool>(&self, x: &[f64], r: f64, keep: F) -> Result<f64> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("radius must be positive, got {r}")));
        }
        if x.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                found: x.len(),
            });
        }
        // Below this radius the clipping geometry drowns in coordinate rounding;
        // measure at the floor and scale, which is exact while the ball meets
        // only simplices incident to `x`.
        let floor = BALL_RESOLUTION * self.max_edge();
        if r < floor {
            let at_floor = self.local_measure_where(x, floor, keep)?;
            return Ok(at_floor * (r / floor).powi(self.intrinsic_dim as i32));
        }
        let mut total = 0.0;
        for s in 0..self.num_simplices() {
            if !keep(s) {
                continue;
            }
            // cheap rejection: every point of the simplex is within `diam` of vertex 0
            let v0 = self.vertex(self.simplex(s)[0]);
            let reach = simplex_diameter(&self.simplex_vertices(s));
            let d0 = dist(v0, x);
            if d0 > r + reach {
                continue;
            }
            total += self.simplex_ball_measure(s, x, r);
        }
        Ok(total)
    }

    pub fn to_ndmesh(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ndmesh {} {}", self.intrinsic_dim, self.ambient_dim);
        for v in self.vertices.chunks(self.ambient_dim) {
            out.push('v');
            for x in v {
                let _ = write!(out, " {x:.16e}");
            }
            out.push('\n');
        }
        for s in self.simplices.chunks(self.intrinsic_dim + 1) {
            out.push('s');
            for i in s {
                let _ = write!(out, " {i}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_obj(&self) -> Result<String> {
        if self.ambient_dim != 3 || self.intrinsic_dim != 2 {
            return Err(Error::Unsupported("OBJ output needs a surface in R^3".into()));
        }
        let mut out = String::new();
        for v in self.vertices.chunks(3) {
            let _ = writeln!(out, "v {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
        }
        for s in self.simplices.chunks(3) {
            let _ = writeln!(out, "f {} {} {}", s[0] + 1, s[1] + 1, s[2] + 1);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = match MeshFormat::from_path(path)? {
            MeshFormat::Obj => self.to_obj()?,
            MeshFormat::Ndmesh => self.to_ndmesh(),
        };
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn simplex_diameter(verts: &[&[f64]]) -> f64 {
    let mut d: f64 = 0.0;
    for a in 0..verts.len() {
        for b in 0..a {
            d = d.max(dist2(verts[a], verts[b]));
        }
    }
    d.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ndmesh,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            Some(e) if e == "ndmesh" => Ok(MeshFormat::Ndmesh),
            _ => Err(Error::invalid(format!(
                "cannot infer mesh format from {}; use .obj or .ndmesh",
                path.display()
            ))),
        }
    }
}

pub fn load(path: &Path, format: Option<MeshFormat>) -> Result<SimplicialSet> {
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let text = std::fs::read_to_string(path)?;
    match format {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::Ndmesh => parse_ndmesh(&text),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite coordinate {tok:?}"),
        });
    }
    Ok(v)
}

/// Parses the `v`/`f` subset of Wavefront OBJ (triangles in `R^3`).
pub fn parse_obj(text: &str) -> Result<SimplicialSet> {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    let mut ignored = 0usize;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut toks = body.split_whitespace();
        match toks.next() {
            None => {}
            Some("v") => {
                let coords: Vec<&str> = toks.collect();
                if coords.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    });
                }
                for c in &coords[..3] {
                    verts.push(parse_f64(c, line)?);
                }
            }
            Some("f") => {
                let nv = verts.len() / 3;
                let mut idx = Vec::new();
                for t in toks {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad face index {t:?}"),
                    })?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        nv as i64 + i
                    } else {
                        -1
                    };
                    if resolved < 0 || resolved as usize >= nv {
                        return Err(Error::Parse {
                            line,
                            message: format!("face index {i} out of range"),
                        });
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!("only triangles are supported, found {} indices", idx.len()),
                    });
                }
                tris.extend(idx);
            }
            Some(_) => ignored += 1,
        }
    }
    if ignored > 0 {
        log::warn!("ignored {ignored} unsupported OBJ records");
    }
    if tris.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: "no faces".into(),
        });
    }
    SimplicialSet::new(3, 2, verts, tris)
}

/// Parses the `ndmesh <m> <n>` text format.
pub fn parse_ndmesh(text: &str) -> Result<SimplicialSet> {
    let mut header: Option<(usize, usize)> = None;
    let mut verts = Vec::new();
    let mut simplices = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut toks = body.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        match (tag, header) {
            ("ndmesh", None) => {
                if rest.len() != 2 {
                    return Err(Error::Parse {
                        line,
                        message: "header must be `ndmesh <m> <n>`".into(),
                    });
                }
                let parse = |s: &str| {
                    s.parse::<usize>().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad dimension {s:?}"),
                    })
                };
                let (m, n) = (parse(rest[0])?, parse(rest[1])?);
                if m == 0 || n == 0 || m > n {
                    return Err(Error::Parse {
                        line,
                        message: format!("invalid dimensions m = {m}, n = {n}"),
                    });
                }
                header = Some((m, n));
            }
            (_, None) => {
                return Err(Error::Parse {
                    line,
                    message: "missing `ndmesh <m> <n>` header".into(),
                })
            }
            ("v", Some((_, n))) => {
                if rest.len() != n {
                    return Err(Error::Parse {
                        line,
                        message: format!("vertex has {} coordinates, expected {n}", rest.len()),
                    });
                }
                for t in rest {
                    verts.push(parse_f64(t, line)?);
                }
            }
            ("s", Some((m, n))) => {
                if rest.len() != m + 1 {
                    return Err(Error::Parse {
                        line,
                        message: format!("simplex has {} indices, expected {}", rest.len(), m + 1),
                    });
                }
                for t in rest {
                    let i: usize = t.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad index {t:?}"),
                    })?;
                    if i >= verts.len() / n {
                        return Err(Error::Parse {
                            line,
                            message: format!("index {i} refers to an undefined vertex"),
                        });
                    }
                    simplices.push(i);
                }
            }
            (other, Some(_)) => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown record {other:?}"),
                })
            }
        }
    }
    let Some((m, n)) = header else {
        return Err(Error::Parse {
            line: 1,
            message: "empty file".into(),
        });
    };
    if simplices.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: "no simplices".into(),
        });
    }
    SimplicialSet::new(n, m, verts, simplices)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    /// One point per simplex at its centroid.
    Centroid,
    /// Three points per simplex: edge midpoints (`m = 2`) or Simpson nodes (`m = 1`).
    Bary3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneRule {
    /// The affine hull of the parent simplex.
    Flat,
    /// Measure-weighted average over simplices sharing a vertex with the parent.
    Smoothed,
}

/// Flattened sample points `(x, w, H_x, parent)` driving every double sum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureCloud {
    ambient_dim: usize,
    intrinsic_dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
    /// `m * n` frame coordinates per point
    frames: Vec<f64>,
    parents: Vec<usize>,
    rule: QuadratureRule,
    plane_rule: PlaneRule,
}

impl QuadratureCloud {
    pub fn build(set: &SimplicialSet, rule: QuadratureRule, plane_rule: PlaneRule) -> Result<Self> {
        let n = set.ambient_dim;
        let m = set.intrinsic_dim;
        if rule == QuadratureRule::Bary3 && m > 2 {
            return Err(Error::invalid(format!("the three-point rule needs m <= 2, got m = {m}")));
        }
        let planes: Vec<Plane> = match plane_rule {
            PlaneRule::Flat => set.planes.clone(),
            PlaneRule::Smoothed => {
                let stars = set.vertex_stars();
                (0..set.num_simplices())
                    .map(|s| {
                        let mut nb: Vec<usize> = set.simplex(s).iter().flat_map(|&v| stars[v].iter().copied()).collect();
                        nb.sort_unstable();
                        nb.dedup();
                        Plane::weighted_mean(nb.iter().map(|&t| (&set.planes[t], set.measures[t])))
                    })
                    .collect::<Result<_>>()?
            }
        };
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        let mut frames = Vec::new();
        let mut parents = Vec::new();
        for s in 0..set.num_simplices() {
            let verts = set.simplex_vertices(s);
            let mu = set.measures[s];
            let mut push = |p: Vec<f64>, w: f64| {
                positions.extend_from_slice(&p);
                weights.push(w);
                frames.extend_from_slice(planes[s].frame());
                parents.push(s);
            };
            match rule {
                QuadratureRule::Centroid => push(set.centroid(s), mu),
                QuadratureRule::Bary3 if m == 1 => {
                    let mid: Vec<f64> = (0..n).map(|k| 0.5 * (verts[0][k] + verts[1][k])).collect();
                    push(verts[0].to_vec(), mu / 6.0);
                    push(mid, 4.0 * mu / 6.0);
                    push(verts[1].to_vec(), mu / 6.0);
                }
                QuadratureRule::Bary3 => {
                    for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                        let mid: Vec<f64> = (0..n).map(|k| 0.5 * (verts[a][k] + verts[b][k])).collect();
                        push(mid, mu / 3.0);
                    }
                }
            }
        }
        Ok(QuadratureCloud {
            ambient_dim: n,
            intrinsic_dim: m,
            positions,
            weights,
            frames,
            parents,
            rule,
            plane_rule,
        })
    }

    pub fn centroid(set: &SimplicialSet) -> Self {
        Self::build(set, QuadratureRule::Centroid, PlaneRule::Flat).expect("centroid rule is always supported")
    }

    /// Assembles a cloud from raw parts (frames are `m * n` per point and must be orthonormal).
    pub fn from_parts(
        n: usize,
        m: usize,
        positions: Vec<f64>,
        weights: Vec<f64>,
        frames: Vec<f64>,
        parents: Vec<usize>,
    ) -> Result<Self> {
        let len = weights.len();
        if positions.len() != len * n || frames.len() != len * n * m || parents.len() != len {
            return Err(Error::invalid("inconsistent cloud buffer lengths"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("cloud weights must be positive and finite"));
        }
        for f in frames.chunks(n * m) {
            Plane::from_frame(n, f.to_vec())?;
        }
        Ok(QuadratureCloud {
            ambient_dim: n,
            intrinsic_dim: m,
            positions,
            weights,
            frames,
            parents,
            rule: QuadratureRule::Centroid,
            plane_rule: PlaneRule::Flat,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    pub fn plane_rule(&self) -> PlaneRule {
        self.plane_rule
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn frame(&self, i: usize) -> &[f64] {
        let k = self.ambient_dim * self.intrinsic_dim;
        &self.frames[i * k..(i + 1) * k]
    }

    pub fn plane(&self, i: usize) -> Plane {
        Plane::from_frame(self.ambient_dim, self.frame(i).to_vec()).expect("cloud frames are orthonormal")
    }

    #[inline]
    pub fn parent(&self, i: usize) -> usize {
        self.parents[i]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The cloud of `lambda * Σ`: positions scale by `lambda`, weights by `lambda^m`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.positions.iter_mut().for_each(|x| *x *= lambda);
        let f = lambda.powi(self.intrinsic_dim as i32);
        out.weights.iter_mut().for_each(|w| *w *= f);
        out
    }

    /// The same points in reverse order.
    pub fn reversed(&self) -> Self {
        let idx: Vec<usize> = (0..self.len()).rev().collect();
        self.subset(&idx)
    }

    /// The points with the given indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let n = self.ambient_dim;
        let k = n * self.intrinsic_dim;
        QuadratureCloud {
            ambient_dim: n,
            intrinsic_dim: self.intrinsic_dim,
            positions: idx.iter().flat_map(|&i| self.position(i).iter().copied()).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            frames: idx.iter().flat_map(|&i| self.frames[i * k..(i + 1) * k].iter().copied()).collect(),
            parents: idx.iter().map(|&i| self.parents[i]).collect(),
            rule: self.rule,
            plane_rule: self.plane_rule,
        }
    }

    /// Indices of points in the closed ball `B(x, r)`.
    pub fn ball(&self, x: &[f64], r: f64) -> Vec<usize> {
        let r2 = r * r;
        (0..self.len()).filter(|&i| dist2(self.position(i), x) <= r2).collect()
    }

    /// `|Q_{H_i}(v)|` using the stored frame, with the residual formed explicitly.
    #[inline]
    pub fn normal_norm(&self, i: usize, v: &[f64]) -> f64 {
        normal_norm_frame(self.frame(i), self.ambient_dim, self.intrinsic_dim, v)
    }

    pub fn diameter(&self) -> f64 {
        let len = self.len();
        (0..len)
            .into_par_iter()
            .map(|i| (0..i).map(|j| dist2(self.position(i), self.position(j))).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
            .sqrt()
    }
}

/// `|Q(v)|` for the plane with orthonormal `frame` (`m` vectors of length `n`).
#[inline]
pub fn normal_norm_frame(frame: &[f64], n: usize, m: usize, v: &[f64]) -> f64 {
    match (n, m) {
        (2, 1) => {
            let c = frame[0] * v[0] + frame[1] * v[1];
            let r0 = v[0] - c * frame[0];
            let r1 = v[1] - c * frame[1];
            (r0 * r0 + r1 * r1).sqrt()
        }
        (3, 1) => {
            let c = frame[0] * v[0] + frame[1] * v[1] + frame[2] * v[2];
            let r = [v[0] - c * frame[0], v[1] - c * frame[1], v[2] - c * frame[2]];
            (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
        }
        (3, 2) => {
            let c0 = frame[0] * v[0] + frame[1] * v[1] + frame[2] * v[2];
            let c1 = frame[3] * v[0] + frame[4] * v[1] + frame[5] * v[2];
            let r = [
                v[0] - c0 * frame[0] - c1 * frame[3],
                v[1] - c0 * frame[1] - c1 * frame[4],
                v[2] - c0 * frame[2] - c1 * frame[5],
            ];
            (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
        }
        _ => {
            let mut acc = 0.0;
            let coeffs: Vec<f64> = (0..m).map(|i| dot(&frame[i * n..(i + 1) * n], v)).collect();
            for k in 0..n {
                let mut r = v[k];
                for (i, c) in coeffs.iter().enumerate() {
                    r -= c * frame[i * n + k];
                }
                acc += r * r;
            }
            acc.sqrt()
        }
    }
}

/// Diagnostics for the Ahlfors lower bound and the flatness of the mock planes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// `min H^m(Σ ∩ B(x, r)) / r^m` over probes and radii.
    pub ahlfors_k: f64,
    /// `(r, max |Q_{H_x}(y - x)| / |y - x|)` per probe radius.
    pub delta_flatness: Vec<(f64, f64)>,
    pub flatness_probe_count: usize,
    /// Flatness threshold used to flag violations.
    pub delta: f64,
    pub violations: Vec<FlatnessViolation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatnessViolation {
    pub point: Vec<f64>,
    pub radius: f64,
    pub value: f64,
}

/// Evenly spaced probe indices into a cloud.
pub fn probe_indices(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return Vec::new();
    }
    let count = count.min(len);
    (0..count).map(|k| k * len / count).collect()
}

/// Probes `probe_count` evenly spaced cloud points at every radius. A probe is
/// flagged when its flatness ratio reaches `delta`.
pub fn check_admissibility(
    set: &SimplicialSet,
    cloud: &QuadratureCloud,
    probe_radii: &[f64],
    probe_count: usize,
    delta: f64,
) -> Result<AdmissibilityReport> {
    if cloud.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    if probe_radii.is_empty() || probe_radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::invalid("probe radii must be positive"));
    }
    let m = set.intrinsic_dim as i32;
    let probes = probe_indices(cloud.len(), probe_count);
    let rows: Vec<(f64, Vec<(f64, f64)>)> = probes
        .par_iter()
        .map(|&p| {
            let x = cloud.position(p);
            let mut k = f64::INFINITY;
            let mut flat = Vec::with_capacity(probe_radii.len());
            for &r in probe_radii {
                let mu = set.local_measure(x, r).unwrap_or(0.0);
                k = k.min(mu / r.powi(m));
                let mut worst: f64 = 0.0;
                for j in 0..cloud.len() {
                    let y = cloud.position(j);
                    let d = dist(x, y);
                    if d == 0.0 || d > r {
                        continue;
                    }
                    let v = sub(y, x);
                    worst = worst.max(cloud.normal_norm(p, &v) / d);
                }
                flat.push((r, worst));
            }
            (k, flat)
        })
        .collect();
    let ahlfors_k = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let mut delta_flatness: Vec<(f64, f64)> = probe_radii.iter().map(|&r| (r, 0.0)).collect();
    let mut violations = Vec::new();
    for (&p, (_, flat)) in probes.iter().zip(&rows) {
        for (i, &(r, v)) in flat.iter().enumerate() {
            delta_flatness[i].1 = delta_flatness[i].1.max(v);
            if v >= delta {
                violations.push(FlatnessViolation {
                    point: cloud.position(p).to_vec(),
                    radius: r,
                    value: v,
                });
            }
        }
    }
    Ok(AdmissibilityReport {
        ahlfors_k,
        delta_flatness,
        flatness_probe_count: probes.len(),
        delta,
        violations,
    })
}
