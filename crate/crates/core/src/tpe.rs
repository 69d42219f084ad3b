//! Tangent-point energies over quadrature clouds.
//!
//! The discrete energy is the sum of `w_i w_j (1/R_tp(x_i, x_j))^q` over
//! ordered pairs `i != j` whose points come from different simplices and do not
//! coincide. `1/R_tp(x, y) = 2 |Q_{H_x}(y - x)| / |y - x|^2`.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{normal_norm_frame, PlaneRule, QuadratureCloud, QuadratureRule, SimplicialSet};
use crate::error::{Error, Result};
use crate::exact_sum::ExactSum;
use crate::grassmann::{top_eigenvectors, Plane};
use crate::linalg::{dist, dist2, dot, linear_fit};

/// Points closer than this (relative to `|y - x|`) to the plane `x + H_x` give a zero kernel.
pub const IN_PLANE_TOL: f64 = 1e-14;

const ROW_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnergyMode {
    Exact,
    /// Far-field clustering; a cluster pair is far when `(r_A + r_B) / dist <= theta`.
    Bvh { theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Exact, order-independent accumulation: identical bits for any thread count or point order.
    Deterministic,
    /// Plain floating-point partial sums in whatever order the scheduler picks.
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyOptions {
    pub q: f64,
    pub mode: EnergyMode,
    pub reduction: Reduction,
}

impl EnergyOptions {
    pub fn exact(q: f64) -> Self {
        EnergyOptions {
            q,
            mode: EnergyMode::Exact,
            reduction: Reduction::Deterministic,
        }
    }

    pub fn bvh(q: f64, theta: f64) -> Self {
        EnergyOptions {
            q,
            mode: EnergyMode::Bvh { theta },
            reduction: Reduction::Deterministic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExponentRegime {
    Supercritical,
    Critical,
    Subcritical,
}

impl ExponentRegime {
    pub fn of(q: f64, m: usize) -> Self {
        let c = 2.0 * m as f64;
        if q > c {
            ExponentRegime::Supercritical
        } else if q == c {
            ExponentRegime::Critical
        } else {
            ExponentRegime::Subcritical
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub q: f64,
    pub regime: ExponentRegime,
    pub mode: EnergyMode,
    pub total_energy: f64,
    /// Ordered pairs evaluated (directly or inside a far-field cluster pair).
    pub pair_count: u64,
    /// Ordered pairs skipped because both points share a simplex or coincide.
    pub excluded_pairs: u64,
    /// Largest kernel value over directly evaluated pairs.
    pub max_inv_rtp: f64,
    pub acceleration_error_bound: f64,
    /// Wall-clock seconds; `None` for deterministic reductions.
    pub elapsed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergy {
    pub center: Vec<f64>,
    pub radius: f64,
    pub value: f64,
    pub points: usize,
}

/// `1/R_tp(x, y)` for the plane `x + H`.
pub fn inv_rtp(x: &[f64], h: &Plane, y: &[f64]) -> Result<f64> {
    if x.len() != h.ambient_dim() || y.len() != h.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: h.ambient_dim(),
            found: if x.len() != h.ambient_dim() { x.len() } else { y.len() },
        });
    }
    let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let r2 = dot(&d, &d);
    if r2 == 0.0 {
        return Err(Error::invalid("the tangent-point radius is undefined for x = y"));
    }
    Ok(kernel_value(h.normal_norm(&d), r2))
}

#[inline]
fn kernel_value(g: f64, r2: f64) -> f64 {
    if g <= IN_PLANE_TOL * r2.sqrt() {
        0.0
    } else {
        2.0 * g / r2
    }
}

#[derive(Clone, Copy)]
enum Power {
    Int(i32),
    Real(f64),
}

impl Power {
    fn new(q: f64) -> Self {
        if q.fract() == 0.0 && q.abs() <= 64.0 {
            Power::Int(q as i32)
        } else {
            Power::Real(q)
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Power::Int(k) => x.powi(k),
            Power::Real(q) => x.powf(q),
        }
    }
}

#[inline]
fn pair_kernel(cloud: &QuadratureCloud, i: usize, j: usize) -> Option<f64> {
    if cloud.parent(i) == cloud.parent(j) {
        return None;
    }
    let n = cloud.ambient_dim();
    let x = cloud.position(i);
    let y = cloud.position(j);
    let mut d = [0.0f64; 8];
    let mut heap;
    let d: &mut [f64] = if n <= 8 {
        &mut d[..n]
    } else {
        heap = vec![0.0; n];
        &mut heap
    };
    let mut r2 = 0.0;
    for k in 0..n {
        d[k] = y[k] - x[k];
        r2 += d[k] * d[k];
    }
    if r2 == 0.0 {
        return None;
    }
    let g = normal_norm_frame(cloud.frame(i), n, cloud.intrinsic_dim(), d);
    Some(kernel_value(g, r2))
}

fn validate_q(q: f64, m: usize) -> Result<ExponentRegime> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::invalid(format!("q must be positive, got {q}")));
    }
    let regime = ExponentRegime::of(q, m);
    match regime {
        ExponentRegime::Supercritical => {}
        ExponentRegime::Critical => log::warn!("q = 2m is the critical exponent; the regularity theorems need q > 2m"),
        ExponentRegime::Subcritical => log::warn!("q = {q} < 2m lies outside the regularity theorems"),
    }
    Ok(regime)
}

#[derive(Default)]
struct Partial {
    sum_fast: f64,
    pairs: u64,
    excluded: u64,
    max_k: f64,
}

fn exact_rows(cloud: &QuadratureCloud, rows: std::ops::Range<usize>, p: Power, acc: &mut ExactSum, part: &mut Partial, fast: bool) {
    let len = cloud.len();
    for i in rows {
        let wi = cloud.weight(i);
        for j in 0..len {
            if j == i {
                continue;
            }
            match pair_kernel(cloud, i, j) {
                None => part.excluded += 1,
                Some(k) => {
                    part.pairs += 1;
                    if k > part.max_k {
                        part.max_k = k;
                    }
                    if k > 0.0 {
                        let t = wi * cloud.weight(j) * p.apply(k);
                        if fast {
                            part.sum_fast += t;
                        } else {
                            acc.add(t);
                        }
                    }
                }
            }
        }
    }
}

/// Total energy of the cloud.
pub fn energy(cloud: &QuadratureCloud, opts: &EnergyOptions) -> Result<EnergyReport> {
    let regime = validate_q(opts.q, cloud.intrinsic_dim())?;
    let start = Instant::now();
    let fast = opts.reduction == Reduction::Fast;
    let mut report = match opts.mode {
        EnergyMode::Exact => exact_energy(cloud, opts.q, fast),
        EnergyMode::Bvh { theta } => bvh_energy(cloud, opts.q, theta, fast)?,
    };
    report.regime = regime;
    report.mode = opts.mode;
    report.elapsed = if fast { Some(start.elapsed().as_secs_f64()) } else { None };
    if !report.total_energy.is_finite() {
        return Err(Error::NonFinite("total energy".into()));
    }
    Ok(report)
}

fn exact_energy(cloud: &QuadratureCloud, q: f64, fast: bool) -> EnergyReport {
    let p = Power::new(q);
    let len = cloud.len();
    let starts: Vec<usize> = (0..len).step_by(ROW_CHUNK).collect();
    let parts: Vec<(ExactSum, Partial)> = starts
        .par_iter()
        .map(|&s| {
            let mut acc = ExactSum::new();
            let mut part = Partial::default();
            exact_rows(cloud, s..(s + ROW_CHUNK).min(len), p, &mut acc, &mut part, fast);
            (acc, part)
        })
        .collect();
    let mut total = ExactSum::new();
    let mut agg = Partial::default();
    for (acc, part) in &parts {
        total.merge(acc);
        agg.sum_fast += part.sum_fast;
        agg.pairs += part.pairs;
        agg.excluded += part.excluded;
        agg.max_k = agg.max_k.max(part.max_k);
    }
    EnergyReport {
        q,
        regime: ExponentRegime::Supercritical,
        mode: EnergyMode::Exact,
        total_energy: if fast { agg.sum_fast } else { total.value() },
        pair_count: agg.pairs,
        excluded_pairs: agg.excluded,
        max_inv_rtp: agg.max_k,
        acceleration_error_bound: 0.0,
        elapsed: None,
    }
}

/// Energy of the points inside the closed ball `B(x, r)`, exact mode.
pub fn local_energy(cloud: &QuadratureCloud, x: &[f64], r: f64, q: f64) -> Result<LocalEnergy> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    validate_q(q, cloud.intrinsic_dim())?;
    let idx = cloud.ball(x, r);
    let sub = cloud.subset(&idx);
    let value = if sub.len() < 2 { 0.0 } else { exact_energy(&sub, q, false).total_energy };
    Ok(LocalEnergy {
        center: x.to_vec(),
        radius: r,
        value,
        points: idx.len(),
    })
}

/// Least-squares slope of `log E_q(lambda Σ)` against `log lambda`.
pub fn scaling_check(cloud: &QuadratureCloud, q: f64, lambdas: &[f64]) -> Result<ScalingFit> {
    if lambdas.len() < 3 {
        return Err(Error::invalid("scaling fit needs at least three scales"));
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("scales must be positive"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &l in lambdas {
        let e = energy(&cloud.scaled(l), &EnergyOptions::exact(q))?.total_energy;
        if !(e > 0.0) {
            return Err(Error::pre("energy vanishes; the scaling slope is undefined"));
        }
        xs.push(l.ln());
        ys.push(e.ln());
    }
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        expected: 2.0 * cloud.intrinsic_dim() as f64 - q,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `2m - q`
    pub expected: f64,
}

// ---------------------------------------------------------------------------
// clustered far field

struct Node {
    start: usize,
    end: usize,
    center: Vec<f64>,
    radius: f64,
    weight: f64,
    frame: Vec<f64>,
    /// upper bound on `||pi_{H_i} - pi_mean||` over the node's points
    alpha: f64,
    children: Option<(usize, usize)>,
}

const LEAF_SIZE: usize = 8;

struct Tree {
    order: Vec<usize>,
    nodes: Vec<Node>,
}

fn build_tree(cloud: &QuadratureCloud) -> Tree {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    let mut nodes = Vec::new();
    build_node(cloud, &mut order, 0, cloud.len(), &mut nodes);
    Tree { order, nodes }
}

fn build_node(cloud: &QuadratureCloud, order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let n = cloud.ambient_dim();
    let m = cloud.intrinsic_dim();
    let ids = &order[start..end];
    let weight: f64 = ids.iter().map(|&i| cloud.weight(i)).sum();
    let mut center = vec![0.0; n];
    for &i in ids {
        crate::linalg::axpy(&mut center, cloud.weight(i) / weight, cloud.position(i));
    }
    let mut proj = DMatrix::<f64>::zeros(n, n);
    for &i in ids {
        let f = DMatrix::from_column_slice(n, m, cloud.frame(i));
        proj += (&f * f.transpose()) * cloud.weight(i);
    }
    let mean = top_eigenvectors(&proj, m).expect("mean projector has rank m");
    let alpha = ids
        .iter()
        .map(|&i| {
            let fi = cloud.frame(i);
            let mut s = 0.0;
            for a in 0..m {
                for b in 0..m {
                    let c = dot(&fi[a * n..(a + 1) * n], mean.basis(b));
                    s += c * c;
                }
            }
            (2.0 * m as f64 - 2.0 * s).max(0.0).sqrt()
        })
        .fold(0.0, f64::max);
    let idx = nodes.len();
    nodes.push(Node {
        start,
        end,
        center: center.clone(),
        radius: 0.0,
        weight,
        frame: mean.frame().to_vec(),
        alpha,
        children: None,
    });
    let radius = if end - start <= LEAF_SIZE {
        ids.iter().map(|&i| dist(cloud.position(i), &center)).fold(0.0, f64::max)
    } else {
        // split along the widest axis at the median
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for &i in ids {
            for (k, x) in cloud.position(i).iter().enumerate() {
                lo[k] = lo[k].min(*x);
                hi[k] = hi[k].max(*x);
            }
        }
        let axis = (0..n).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a))).unwrap();
        let mid = (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            cloud.position(a)[axis].total_cmp(&cloud.position(b)[axis]).then(a.cmp(&b))
        });
        let l = build_node(cloud, order, start, start + mid, nodes);
        let r = build_node(cloud, order, start + mid, end, nodes);
        nodes[idx].children = Some((l, r));
        // nested bounding balls: the parent ball contains both child balls
        [l, r]
            .iter()
            .map(|&c| dist(&nodes[c].center, &center) + nodes[c].radius)
            .fold(0.0, f64::max)
    };
    nodes[idx].radius = radius;
    idx
}

/// Largest distance between two points sharing a parent simplex.
fn max_parent_extent(cloud: &QuadratureCloud) -> f64 {
    let mut by_parent: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..cloud.len() {
        by_parent.entry(cloud.parent(i)).or_default().push(i);
    }
    by_parent
        .values()
        .map(|v| {
            let mut d: f64 = 0.0;
            for a in 0..v.len() {
                for b in 0..a {
                    d = d.max(dist2(cloud.position(v[a]), cloud.position(v[b])));
                }
            }
            d.sqrt()
        })
        .fold(0.0, f64::max)
}

fn bvh_energy(cloud: &QuadratureCloud, q: f64, theta: f64, fast: bool) -> Result<EnergyReport> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("opening parameter theta must lie in (0, 1), got {theta}")));
    }
    if q < 1.0 {
        return Err(Error::Unsupported("clustered mode needs q >= 1 for its error bound".into()));
    }
    if cloud.is_empty() {
        return Ok(exact_energy(cloud, q, fast));
    }
    let tree = build_tree(cloud);
    let extent = max_parent_extent(cloud);
    let mut far: Vec<(usize, usize)> = Vec::new();
    let mut near: Vec<(usize, usize)> = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    let nodes = &tree.nodes;
    while let Some((a, b)) = stack.pop() {
        let (na, nb) = (&nodes[a], &nodes[b]);
        if a == b {
            match na.children {
                None => near.push((a, a)),
                Some((l, r)) => stack.extend([(l, l), (l, r), (r, l), (r, r)]),
            }
            continue;
        }
        let d = dist(&na.center, &nb.center);
        let rr = na.radius + nb.radius;
        if d - rr > extent && rr <= theta * d {
            far.push((a, b));
            continue;
        }
        match (na.children, nb.children) {
            (None, None) => near.push((a, b)),
            (Some((l, r)), None) => stack.extend([(l, b), (r, b)]),
            (None, Some((l, r))) => stack.extend([(a, l), (a, r)]),
            (Some((al, ar)), Some((bl, br))) => {
                if na.radius >= nb.radius {
                    stack.extend([(al, b), (ar, b)]);
                } else {
                    stack.extend([(a, bl), (a, br)]);
                }
            }
        }
    }
    let p = Power::new(q);
    let n = cloud.ambient_dim();
    let m = cloud.intrinsic_dim();
    let order = &tree.order;
    let near_parts: Vec<(ExactSum, Partial)> = near
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = ExactSum::new();
            let mut part = Partial::default();
            for &(a, b) in chunk {
                let (na, nb) = (&nodes[a], &nodes[b]);
                for &i in &order[na.start..na.end] {
                    for &j in &order[nb.start..nb.end] {
                        if i == j {
                            continue;
                        }
                        match pair_kernel(cloud, i, j) {
                            None => part.excluded += 1,
                            Some(k) => {
                                part.pairs += 1;
                                part.max_k = part.max_k.max(k);
                                if k > 0.0 {
                                    let t = cloud.weight(i) * cloud.weight(j) * p.apply(k);
                                    if fast {
                                        part.sum_fast += t;
                                    } else {
                                        acc.add(t);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (acc, part)
        })
        .collect();
    let far_parts: Vec<(ExactSum, ExactSum, f64, f64, u64)> = far
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = ExactSum::new();
            let mut err = ExactSum::new();
            let (mut fsum, mut esum) = (0.0, 0.0);
            let mut pairs = 0u64;
            for &(a, b) in chunk {
                let (na, nb) = (&nodes[a], &nodes[b]);
                let dvec: Vec<f64> = nb.center.iter().zip(&na.center).map(|(y, x)| y - x).collect();
                let r2 = dot(&dvec, &dvec);
                let g = normal_norm_frame(&na.frame, n, m, &dvec);
                let k = kernel_value(g, r2);
                let ww = na.weight * nb.weight;
                let val = ww * p.apply(k);
                let dmin = r2.sqrt() - na.radius - nb.radius;
                let kmax = 2.0 / dmin;
                let lip = 6.0 * (na.radius + nb.radius) / (dmin * dmin) + 2.0 * na.alpha / dmin;
                let bound = ww * q * kmax.powf(q - 1.0) * lip;
                pairs += ((na.end - na.start) * (nb.end - nb.start)) as u64;
                if fast {
                    fsum += val;
                    esum += bound;
                } else {
                    acc.add(val);
                    err.add(bound);
                }
            }
            (acc, err, fsum, esum, pairs)
        })
        .collect();
    let mut total = ExactSum::new();
    let mut errs = ExactSum::new();
    let mut agg = Partial::default();
    let mut err_fast = 0.0;
    for (acc, part) in &near_parts {
        total.merge(acc);
        agg.sum_fast += part.sum_fast;
        agg.pairs += part.pairs;
        agg.excluded += part.excluded;
        agg.max_k = agg.max_k.max(part.max_k);
    }
    for (acc, err, fsum, esum, pairs) in &far_parts {
        total.merge(acc);
        errs.merge(err);
        agg.sum_fast += fsum;
        err_fast += esum;
        agg.pairs += pairs;
    }
    Ok(EnergyReport {
        q,
        regime: ExponentRegime::Supercritical,
        mode: EnergyMode::Bvh { theta },
        total_energy: if fast { agg.sum_fast } else { total.value() },
        pair_count: agg.pairs,
        excluded_pairs: agg.excluded,
        max_inv_rtp: agg.max_k,
        acceleration_error_bound: if fast { err_fast } else { errs.value() },
        elapsed: None,
    })
}

// ---------------------------------------------------------------------------
// gradient with respect to vertex positions

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GradientScheme {
    Analytic,
    /// Central differences with step `h` times the local mean edge length.
    CentralDiff { h: f64 },
}

/// Energy and per-vertex gradient (`n` entries per vertex).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub energy: f64,
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

pub fn gradient(set: &SimplicialSet, q: f64, scheme: GradientScheme) -> Result<Gradient> {
    validate_q(q, set.intrinsic_dim())?;
    match scheme {
        GradientScheme::Analytic => analytic_gradient(set, q),
        GradientScheme::CentralDiff { h } => central_difference_gradient(set, q, h),
    }
}

/// Gradient for a cloud; only flat centroid clouds can be differentiated.
pub fn cloud_gradient(set: &SimplicialSet, cloud: &QuadratureCloud, q: f64, scheme: GradientScheme) -> Result<Gradient> {
    if cloud.rule() != QuadratureRule::Centroid || cloud.plane_rule() != PlaneRule::Flat {
        return Err(Error::Unsupported(
            "the gradient chains through simplex centroids and needs the flat centroid rule".into(),
        ));
    }
    gradient(set, q, scheme)
}

fn centroid_energy(set: &SimplicialSet, q: f64) -> Result<f64> {
    Ok(exact_energy(&QuadratureCloud::centroid(set), q, false).total_energy)
}

fn central_difference_gradient(set: &SimplicialSet, q: f64, h: f64) -> Result<Gradient> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let n = set.ambient_dim();
    let scale = set.local_edge_lengths();
    let base = set.vertices().to_vec();
    let coords: Vec<(usize, usize)> = (0..set.num_vertices()).flat_map(|v| (0..n).map(move |k| (v, k))).collect();
    let values = coords
        .par_iter()
        .map(|&(v, k)| {
            let step = h * scale[v];
            let mut plus = base.clone();
            plus[v * n + k] += step;
            let mut minus = base.clone();
            minus[v * n + k] -= step;
            let ep = centroid_energy(&set.with_vertices(plus)?, q)?;
            let em = centroid_energy(&set.with_vertices(minus)?, q)?;
            Ok((ep - em) / (2.0 * step))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Gradient {
        energy: centroid_energy(set, q)?,
        values,
    })
}

struct SimplexFrame {
    centroid: Vec<f64>,
    weight: f64,
    frame: Vec<f64>,
    /// `E^+ = (E^T E)^{-1} E^T`, `m x n` row-major
    pinv: Vec<f64>,
    /// `d w / d E = w E (E^T E)^{-1}`, `n x m` column-major
    dw_de: Vec<f64>,
}

fn simplex_frames(set: &SimplicialSet) -> Vec<SimplexFrame> {
    let n = set.ambient_dim();
    let m = set.intrinsic_dim();
    (0..set.num_simplices())
        .map(|s| {
            let verts = set.simplex_vertices(s);
            let mut e = DMatrix::<f64>::zeros(n, m);
            for j in 0..m {
                for k in 0..n {
                    e[(k, j)] = verts[j + 1][k] - verts[0][k];
                }
            }
            let gram = e.transpose() * &e;
            let ginv = gram.try_inverse().expect("non-degenerate simplex");
            let pinv = &ginv * e.transpose();
            let w = set.measure(s);
            let dw = (&e * &ginv) * w;
            let mut pinv_rows = Vec::with_capacity(m * n);
            for j in 0..m {
                for k in 0..n {
                    pinv_rows.push(pinv[(j, k)]);
                }
            }
            SimplexFrame {
                centroid: set.centroid(s),
                weight: w,
                frame: set.plane(s).frame().to_vec(),
                pinv: pinv_rows,
                dw_de: dw.as_slice().to_vec(),
            }
        })
        .collect()
}

/// Value of `k^q` and its gradient with respect to `d`, plus the unit normal residual.
#[inline]
fn kernel_with_derivatives(frame: &[f64], n: usize, m: usize, d: &[f64], q: f64, p: Power) -> Option<(f64, f64, Vec<f64>, Vec<f64>)> {
    let r2 = dot(d, d);
    if r2 == 0.0 {
        return None;
    }
    let coeffs: Vec<f64> = (0..m).map(|i| dot(&frame[i * n..(i + 1) * n], d)).collect();
    let mut u = d.to_vec();
    for (i, c) in coeffs.iter().enumerate() {
        crate::linalg::axpy(&mut u, -c, &frame[i * n..(i + 1) * n]);
    }
    let g = crate::linalg::norm(&u);
    if g <= IN_PLANE_TOL * r2.sqrt() {
        return Some((0.0, 0.0, vec![0.0; n], vec![0.0; n]));
    }
    let k = 2.0 * g / r2;
    let kq = p.apply(k);
    let dk_factor = q * kq / k; // q k^{q-1}
    let uhat: Vec<f64> = u.iter().map(|x| x / g).collect();
    let grad: Vec<f64> = (0..n)
        .map(|c| dk_factor * (2.0 * uhat[c] / r2 - 4.0 * g * d[c] / (r2 * r2)))
        .collect();
    // d(k^q)/dg = q k^{q-1} * 2 / r2
    Some((kq, dk_factor * 2.0 / r2, grad, uhat))
}

fn analytic_gradient(set: &SimplicialSet, q: f64) -> Result<Gradient> {
    let n = set.ambient_dim();
    let m = set.intrinsic_dim();
    let frames = simplex_frames(set);
    let ns = frames.len();
    let p = Power::new(q);
    // per simplex: (energy row, dE/dw, dE/dc, dE/dE)
    let rows: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = (0..ns)
        .into_par_iter()
        .map(|s| {
            let fs = &frames[s];
            let mut e_row = 0.0;
            let mut gw = 0.0;
            let mut gc = vec![0.0; n];
            let mut ge = vec![0.0; n * m];
            for (t, ft) in frames.iter().enumerate() {
                if t == s {
                    continue;
                }
                let d_st: Vec<f64> = ft.centroid.iter().zip(&fs.centroid).map(|(a, b)| a - b).collect();
                let d_ts: Vec<f64> = d_st.iter().map(|x| -x).collect();
                let ww = fs.weight * ft.weight;
                if let Some((kq, dkg, grad, uhat)) = kernel_with_derivatives(&fs.frame, n, m, &d_st, q, p) {
                    e_row += ww * kq;
                    gw += ft.weight * kq;
                    crate::linalg::axpy(&mut gc, -ww, &grad);
                    if dkg != 0.0 {
                        // dg/dE_j = -uhat a_j, a = E^+ d
                        for j in 0..m {
                            let a_j = dot(&fs.pinv[j * n..(j + 1) * n], &d_st);
                            for c in 0..n {
                                ge[j * n + c] -= ww * dkg * uhat[c] * a_j;
                            }
                        }
                    }
                }
                if let Some((kq, _, grad, _)) = kernel_with_derivatives(&ft.frame, n, m, &d_ts, q, p) {
                    gw += ft.weight * kq;
                    crate::linalg::axpy(&mut gc, ww, &grad);
                }
            }
            (e_row, gw, gc, ge)
        })
        .collect();
    let mut energy = ExactSum::new();
    let mut values = vec![0.0; set.num_vertices() * n];
    for (s, (e_row, gw, gc, ge)) in rows.iter().enumerate() {
        energy.add(*e_row);
        let idx = set.simplex(s);
        let fs = &frames[s];
        // total derivative with respect to the edge matrix: explicit + through the weight
        let mut de = ge.clone();
        for j in 0..m {
            for c in 0..n {
                de[j * n + c] += gw * fs.dw_de[j * n + c];
            }
        }
        for (slot, &v) in idx.iter().enumerate() {
            let out = &mut values[v * n..(v + 1) * n];
            for c in 0..n {
                out[c] += gc[c] / (m as f64 + 1.0);
            }
            if slot == 0 {
                for j in 0..m {
                    for c in 0..n {
                        out[c] -= de[j * n + c];
                    }
                }
            } else {
                for c in 0..n {
                    out[c] += de[(slot - 1) * n + c];
                }
            }
        }
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("energy gradient".into()));
    }
    Ok(Gradient {
        energy: energy.value(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use std::f64::consts::PI;

    #[test]
    fn kernel_examples() {
        let h = Plane::coordinate(3, &[0, 1]).unwrap();
        assert_eq!(inv_rtp(&[0.0, 0.0, 1.0], &h, &[0.0, 0.0, -1.0]).unwrap(), 1.0);
        assert_eq!(inv_rtp(&[0.0, 0.0, 0.0], &h, &[3.0, -2.0, 0.0]).unwrap(), 0.0);
        let l = Plane::coordinate(2, &[1]).unwrap();
        assert_eq!(inv_rtp(&[1.0, 0.0], &l, &[-1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(inv_rtp(&[1.0, 0.0], &l, &[1.0, 0.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_bad_q() {
        let c = QuadratureCloud::centroid(&shapes::circle(16, 1.0).unwrap());
        assert!(matches!(energy(&c, &EnergyOptions::exact(0.0)), Err(Error::InvalidArgument(_))));
        assert!(matches!(energy(&c, &EnergyOptions::exact(-1.0)), Err(Error::InvalidArgument(_))));
        let crit = energy(&c, &EnergyOptions::exact(2.0)).unwrap();
        assert_eq!(crit.regime, ExponentRegime::Critical);
    }

    #[test]
    fn regular_polygon_closed_form() {
        // centroids lie on the circle of radius cos(pi/N) and each plane is tangent
        // to it, so every pair has k = 1/cos(pi/N)
        for &nseg in &[8usize, 33] {
            let set = shapes::circle(nseg, 1.0).unwrap();
            let c = QuadratureCloud::centroid(&set);
            let e = energy(&c, &EnergyOptions::exact(4.0)).unwrap();
            let s = (PI / nseg as f64).sin();
            let co = (PI / nseg as f64).cos();
            let w = 2.0 * s;
            let k = 1.0 / co;
            let expected = (nseg * (nseg - 1)) as f64 * w * w * k.powi(4);
            assert!((e.total_energy - expected).abs() < 1e-12 * expected, "{} vs {}", e.total_energy, expected);
            assert_eq!(e.pair_count, (nseg * (nseg - 1)) as u64);
        }
    }

    #[test]
    fn flat_disk_has_zero_energy() {
        let disk = shapes::flat_disk(1.0, 6).unwrap();
        let c = QuadratureCloud::centroid(&disk);
        let e = energy(&c, &EnergyOptions::exact(6.0)).unwrap();
        assert_eq!(e.total_energy, 0.0);
        let g = gradient(&disk, 6.0, GradientScheme::Analytic).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn bvh_bound_holds_on_sphere() {
        let s = shapes::icosphere(3, 1.0).unwrap();
        let c = QuadratureCloud::centroid(&s);
        let exact = energy(&c, &EnergyOptions::exact(6.0)).unwrap();
        let mut last = f64::INFINITY;
        for theta in [0.8, 0.5, 0.3, 0.15] {
            let b = energy(&c, &EnergyOptions::bvh(6.0, theta)).unwrap();
            let diff = (b.total_energy - exact.total_energy).abs();
            assert!(diff <= b.acceleration_error_bound, "theta {theta}: {diff} > {}", b.acceleration_error_bound);
            assert!(b.acceleration_error_bound <= last);
            last = b.acceleration_error_bound;
        }
    }

    #[test]
    fn analytic_gradient_matches_differences_on_circle() {
        let set = shapes::perturbed_circle(24, 1.0, 0.05, 3).unwrap();
        let a = gradient(&set, 4.0, GradientScheme::Analytic).unwrap();
        let f = gradient(&set, 4.0, GradientScheme::CentralDiff { h: 1e-5 }).unwrap();
        let floor = 1e-3 * f.max_abs();
        for (x, y) in a.values.iter().zip(&f.values) {
            assert!((x - y).abs() <= 1e-5 * y.abs().max(floor), "{x} vs {y}");
        }
        assert!((a.energy - f.energy).abs() <= 1e-12 * f.energy);
    }
}
