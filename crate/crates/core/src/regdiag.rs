//! Regularity diagnostics: beta numbers, Ahlfors ratio curves, good couples,
//! stopping distances and exponent fits.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{probe_indices, QuadratureCloud, SimplicialSet};
use crate::error::{Error, Result};
use crate::grassmann::{random_plane, LemmaConstants, Plane};
use crate::linalg::{dist, dot, linear_fit, norm, sub, unit_ball_volume};
use crate::linkdiag::{linking_mod2, SphereProbe};
use crate::tpe::local_energy;

/// Beta values below this are treated as zero when fitting.
pub const FLAT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentFit {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ExponentFit {
    fn from_pairs(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                found: pairs.len(),
            });
        }
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
        Ok(ExponentFit {
            pairs,
            slope,
            intercept,
            r_squared: r_squared.clamp(0.0, 1.0),
        })
    }
}

/// Either a fitted exponent or the observation that the data is flat.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum DecayFit {
    Fit(ExponentFit),
    FlatInput,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BetaOptions {
    /// extra descents from random planes, besides the principal-axes start
    pub descent_restarts: usize,
    /// random point tuples tried for the volume lower bound
    pub volume_tuples: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for BetaOptions {
    fn default() -> Self {
        BetaOptions {
            descent_restarts: 4,
            volume_tuples: 32,
            max_iterations: 200,
            seed: 0x6265_7461,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaSample {
    pub radius: f64,
    /// attained by `plane`, so an upper bound on the infimum
    pub beta: f64,
    /// certified lower bound on the infimum
    pub lower: f64,
    /// value at the principal-axes start
    pub initial: f64,
    pub plane: Plane,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaCurve {
    pub center: Vec<f64>,
    pub samples: Vec<BetaSample>,
}

/// Orthonormal basis of `R^n` whose first `m` rows span the plane.
fn full_basis(p: &Plane) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = (0..p.dim()).map(|i| p.basis(i).to_vec()).collect();
    if p.dim() < p.ambient_dim() {
        let c = p.complement()?;
        rows.extend((0..c.dim()).map(|i| c.basis(i).to_vec()));
    }
    Ok(rows)
}

fn max_height(basis: &[Vec<f64>], m: usize, vs: &[Vec<f64>]) -> f64 {
    vs.iter()
        .map(|v| {
            let along: f64 = basis[..m].iter().map(|f| dot(f, v).powi(2)).sum();
            let normal: f64 = basis[m..].iter().map(|f| dot(f, v).powi(2)).sum();
            // the smaller of the two expressions is the better-conditioned one
            normal.min((dot(v, v) - along).max(0.0)).sqrt()
        })
        .fold(0.0, f64::max)
}

fn rotate(basis: &mut [Vec<f64>], i: usize, k: usize, a: f64) {
    let (c, s) = (a.cos(), a.sin());
    let (fi, fk) = (basis[i].clone(), basis[k].clone());
    for t in 0..fi.len() {
        basis[i][t] = c * fi[t] + s * fk[t];
        basis[k][t] = -s * fi[t] + c * fk[t];
    }
}

/// Covariance eigenvectors by decreasing eigenvalue, each oriented so the
/// data has positive third moment along it.
fn principal_basis(cov: &DMatrix<f64>, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let eig = cov.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    idx.iter()
        .map(|&i| {
            let e: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let skew: f64 = vs.iter().map(|v| dot(&e, v).powi(3)).sum();
            if skew < 0.0 {
                e.iter().map(|x| -x).collect()
            } else {
                e
            }
        })
        .collect()
}

/// Coordinate descent over Givens rotations mixing plane and normal directions.
fn descend(mut basis: Vec<Vec<f64>>, m: usize, vs: &[Vec<f64>], max_iter: usize) -> (Vec<Vec<f64>>, f64) {
    let n = basis.len();
    let mut best = max_height(&basis, m, vs);
    let mut step = 0.1;
    for _ in 0..max_iter {
        if step < 1e-10 || best == 0.0 {
            break;
        }
        let mut improved: Option<(usize, usize, f64, f64)> = None;
        for i in 0..m {
            for k in m..n {
                for a in [step, -step] {
                    let mut trial = basis.clone();
                    rotate(&mut trial, i, k, a);
                    let val = max_height(&trial, m, vs);
                    if val < improved.map_or(best, |t| t.3) {
                        improved = Some((i, k, a, val));
                    }
                }
            }
        }
        match improved {
            Some((i, k, a, val)) => {
                rotate(&mut basis, i, k, a);
                if best - val < 1e-10 * best.max(f64::MIN_POSITIVE) {
                    step *= 0.5;
                }
                best = val;
            }
            None => step *= 0.5,
        }
    }
    (basis, best)
}

/// Smallest `h` such that every `m`-plane through the origin leaves one of
/// the `m + 1` vectors at distance at least `h`, from the wedge volume.
fn wedge_lower_bound(us: &[&Vec<f64>]) -> f64 {
    let k = us.len();
    let g = DMatrix::from_fn(k, k, |a, b| dot(us[a], us[b]));
    let vol = g.determinant().max(0.0).sqrt();
    if vol == 0.0 {
        return 0.0;
    }
    let lens: Vec<f64> = us.iter().map(|u| norm(u)).collect();
    let base: f64 = lens.iter().product();
    // |u_1 ^ ... ^ u_k| <= prod(|u_i| + h) - prod |u_i| when all heights are <= h
    let excess = |h: f64| lens.iter().map(|l| l + h).product::<f64>() - base - vol;
    let (mut lo, mut hi) = (0.0, lens.iter().cloned().fold(0.0, f64::max));
    if excess(hi) < 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn greedy_tuple(vs: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut span: Vec<Vec<f64>> = Vec::new();
    for _ in 0..k {
        let resid = |v: &Vec<f64>| {
            let mut r = v.clone();
            for e in &span {
                let c = dot(&r, e);
                crate::linalg::axpy(&mut r, -c, e);
            }
            r
        };
        let Some((best, r)) = vs
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, v)| (i, resid(v)))
            .max_by(|a, b| norm(&a.1).total_cmp(&norm(&b.1)).then(b.0.cmp(&a.0)))
        else {
            break;
        };
        let len = norm(&r);
        chosen.push(best);
        if len > 0.0 {
            span.push(r.iter().map(|x| x / len).collect());
        }
    }
    chosen
}

/// `beta(x, d)`: the smallest normalized height of the cloud points in
/// `B(x, d)` over affine `m`-planes through `x`, bracketed from both sides.
pub fn beta(cloud: &QuadratureCloud, x: &[f64], d: f64, opts: &BetaOptions) -> Result<BetaSample> {
    if !(d > 0.0) {
        return Err(Error::invalid("beta radius must be positive"));
    }
    let (n, m) = (cloud.ambient_dim(), cloud.intrinsic_dim());
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    let idx = cloud.ball(x, d);
    if idx.len() < m + 1 {
        return Err(Error::InsufficientData {
            needed: m + 1,
            found: idx.len(),
        });
    }
    let vs: Vec<Vec<f64>> = idx.iter().map(|&i| sub(cloud.position(i), x)).collect();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for (&i, v) in idx.iter().zip(&vs) {
        let w = cloud.weight(i);
        for a in 0..n {
            for b in 0..n {
                cov[(a, b)] += w * v[a] * v[b];
            }
        }
    }
    let basis0 = principal_basis(&cov, &vs);
    let initial = max_height(&basis0, m, &vs);
    let (mut best_basis, mut best) = descend(basis0.clone(), m, &vs, opts.max_iterations);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.descent_restarts {
        // drawn in principal coordinates so the result moves with the data
        let local = full_basis(&random_plane(&mut rng, n, m))?;
        let start: Vec<Vec<f64>> = local
            .iter()
            .map(|row| (0..n).map(|t| row.iter().zip(&basis0).map(|(c, e)| c * e[t]).sum()).collect())
            .collect();
        let (b, v) = descend(start, m, &vs, opts.max_iterations);
        if v < best {
            best = v;
            best_basis = b;
        }
    }
    let frame: Vec<f64> = best_basis[..m].iter().flatten().copied().collect();
    let plane = Plane::span(n, &frame.chunks(n).collect::<Vec<_>>())?;

    let mut lower = 0.0f64;
    if m < n {
        let tuple = greedy_tuple(&vs, m + 1);
        if tuple.len() == m + 1 {
            let us: Vec<&Vec<f64>> = tuple.iter().map(|&i| &vs[i]).collect();
            lower = lower.max(wedge_lower_bound(&us));
        }
        for _ in 0..opts.volume_tuples {
            let mut t: Vec<usize> = Vec::with_capacity(m + 1);
            while t.len() < (m + 1).min(vs.len()) {
                let c = rng.random_range(0..vs.len());
                if !t.contains(&c) {
                    t.push(c);
                }
            }
            let us: Vec<&Vec<f64>> = t.iter().map(|&i| &vs[i]).collect();
            lower = lower.max(wedge_lower_bound(&us));
        }
    }
    let beta = (best / d).min(1.0);
    Ok(BetaSample {
        radius: d,
        beta,
        lower: (lower / d).min(beta),
        initial: (initial / d).min(1.0),
        plane,
        points: idx.len(),
    })
}

pub fn beta_curve(cloud: &QuadratureCloud, x: &[f64], radii: &[f64], opts: &BetaOptions) -> Result<BetaCurve> {
    let samples = radii.iter().map(|&d| beta(cloud, x, d, opts)).collect::<Result<Vec<_>>>()?;
    Ok(BetaCurve {
        center: x.to_vec(),
        samples,
    })
}

/// Slope of `log max_x beta(x, d)` against `log d`.
pub fn beta_decay_fit(cloud: &QuadratureCloud, probes: &[Vec<f64>], radii: &[f64], opts: &BetaOptions) -> Result<DecayFit> {
    let (lo, hi) = radii
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    if !(hi >= 10.0 * lo) {
        return Err(Error::invalid("radii must span at least one decade"));
    }
    let mut pairs = Vec::new();
    let mut all_flat = true;
    for &d in radii {
        let worst = probes
            .par_iter()
            .map(|x| beta(cloud, x, d, opts).map(|s| s.beta))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        if worst > FLAT_TOL {
            all_flat = false;
            pairs.push((d.ln(), worst.ln()));
        }
    }
    if all_flat {
        return Ok(DecayFit::FlatInput);
    }
    Ok(DecayFit::Fit(ExponentFit::from_pairs(pairs)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AhlforsSample {
    pub center: Vec<f64>,
    pub radius: f64,
    pub ratio: f64,
    pub below_half: bool,
    /// below one half at a radius where the lower bound is claimed
    pub violation: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AhlforsCurve {
    pub r1: Option<f64>,
    pub samples: Vec<AhlforsSample>,
}

impl AhlforsCurve {
    pub fn violations(&self) -> usize {
        self.samples.iter().filter(|s| s.violation).count()
    }
    pub fn min_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min)
    }
}

/// `measure(Σ ∩ B(x, r)) / (ω(m) r^m)` at each probe and radius. Ratios
/// below one half are flagged; they count as violations when `r <= r1`.
pub fn ahlfors_curve(set: &SimplicialSet, probes: &[Vec<f64>], radii: &[f64], r1: Option<f64>) -> Result<AhlforsCurve> {
    let m = set.intrinsic_dim();
    let omega = unit_ball_volume(m);
    let jobs: Vec<(&Vec<f64>, f64)> = probes.iter().flat_map(|x| radii.iter().map(move |&r| (x, r))).collect();
    let samples = jobs
        .par_iter()
        .map(|&(x, r)| {
            let ratio = set.local_measure(x, r)? / (omega * r.powi(m as i32));
            let below_half = ratio < 0.5;
            Ok(AhlforsSample {
                center: x.clone(),
                radius: r,
                ratio,
                below_half,
                violation: below_half && r1.is_none_or(|r1| r <= r1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AhlforsCurve { r1, samples })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GoodCoupleCertificate {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub d: f64,
    pub s_measure: f64,
    pub required: f64,
    pub member_points: Vec<usize>,
}

impl GoodCoupleCertificate {
    pub fn certified(&self) -> bool {
        self.s_measure >= self.required && self.s_measure > 0.0
    }
}

/// The set `S(x, y; alpha, d)` and its weight, at a prescribed scale `d`.
pub fn couple_at_scale(cloud: &QuadratureCloud, x: &[f64], y: &[f64], lambda: f64, alpha: f64, d: f64) -> GoodCoupleCertificate {
    let m = cloud.intrinsic_dim();
    let members: Vec<usize> = cloud
        .ball(x, alpha * alpha * d)
        .into_iter()
        .filter(|&z| cloud.normal_norm(z, &sub(y, cloud.position(z))) >= alpha * d)
        .collect();
    let s_measure = members.iter().map(|&z| cloud.weight(z)).sum();
    GoodCoupleCertificate {
        x: x.to_vec(),
        y: y.to_vec(),
        lambda,
        alpha,
        d,
        s_measure,
        required: lambda * unit_ball_volume(m) * alpha.powi(2 * m as i32) * d.powi(m as i32),
        member_points: members,
    }
}

/// Tests whether `(x, y)` is a good couple at the scale `d = |x - y|`.
pub fn good_couple_search(cloud: &QuadratureCloud, x: &[f64], y: &[f64], lambda: f64, alpha: f64) -> Result<Option<GoodCoupleCertificate>> {
    let d = dist(x, y);
    if d == 0.0 {
        return Err(Error::pre("good couples need distinct points"));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::pre("alpha must lie in (0, 1/2)"));
    }
    let c = couple_at_scale(cloud, x, y, lambda, alpha, d);
    Ok(c.certified().then_some(c))
}

/// Parameters of the stopping-distance construction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub delta: f64,
    pub eta: f64,
    pub lambda: f64,
    /// natural log of the Grassmannian cover size used for `lambda`
    pub log_cover: f64,
    pub verify_linking: bool,
}

/// Natural log of a cover size for `G(n, m)` by angle balls of radius `eps`:
/// projectors lie in a Frobenius ball of radius `sqrt(m)` in the symmetric
/// matrices, and a maximal `eps`-separated set of them is an `eps`-net.
pub fn log_cover_bound(n: usize, m: usize, eps: f64) -> f64 {
    let dim = (n * (n + 1) / 2) as f64;
    dim * (1.0 + 2.0 * (m as f64).sqrt() / eps).ln()
}

impl StoppingConfig {
    /// Largest cone parameter allowed by the angle constraint
    /// `6 c3 (delta + eta) < eps1` with `eta = delta / 5`, capped at 0.05.
    pub fn delta_limit(m: usize) -> f64 {
        let c = LemmaConstants::new(m, 2.0 * m as f64 + 1.0);
        (c.eps1 / (6.0 * c.c3 * 1.2)).min(0.05)
    }

    pub fn default_for(n: usize, m: usize) -> Self {
        Self::with_delta(n, m, 0.9 * Self::delta_limit(m))
    }

    /// `eta = delta / 5` and `lambda = 1 / (3 J)`.
    pub fn with_delta(n: usize, m: usize, delta: f64) -> Self {
        let eta = delta / 5.0;
        let log_cover = log_cover_bound(n, m, eta * eta);
        StoppingConfig {
            delta,
            eta,
            lambda: (-(log_cover + 3f64.ln())).exp(),
            log_cover,
            verify_linking: false,
        }
    }

    pub fn within_theorem_constants(&self, m: usize) -> bool {
        self.delta <= Self::delta_limit(m)
    }

    fn validate(&self, m: usize) -> Result<()> {
        let d = self.delta;
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::pre("delta must lie in (0, 1)"));
        }
        if !(self.eta > 0.0 && self.eta <= d / 5.0) {
            return Err(Error::pre("eta must lie in (0, delta / 5]"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::pre("lambda must be positive"));
        }
        let c = (1.0 - d * d).sqrt();
        if !(c.powi(m as i32) > 0.5 && 0.9 * c > 2.0 / 3.0) {
            return Err(Error::pre("delta too large for the cone estimates"));
        }
        Ok(())
    }
}

/// Radius below which the Ahlfors lower bound is claimed for energy `e`:
/// `(lambda ω(m)^2 eta^(4m+q) / (2 9^q e))^(1/(q-2m))`.
pub fn ahlfors_radius(m: usize, q: f64, lambda: f64, eta: f64, e: f64) -> Result<f64> {
    let mf = m as f64;
    if !(q > 2.0 * mf) {
        return Err(Error::invalid("the Ahlfors radius needs q > 2m"));
    }
    if !(e > 0.0) {
        return Ok(f64::INFINITY);
    }
    let omega = unit_ball_volume(m);
    let log = lambda.ln() + 2.0 * omega.ln() + (4.0 * mf + q) * eta.ln() - 2f64.ln() - q * 9f64.ln() - e.ln();
    Ok((log / (q - 2.0 * mf)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCase {
    GoodCoupleCase1,
    GoodCoupleCase2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoppingResult {
    pub x: Vec<f64>,
    pub d_s: f64,
    /// sampling resolution of `d_s`
    pub uncertainty: f64,
    pub case: StopCase,
    pub partner: Vec<f64>,
    pub certificate: GoodCoupleCertificate,
    pub plane_history: Vec<Plane>,
    pub radii_history: Vec<f64>,
    /// parity of a probe sphere around `x` at each round, when requested
    pub linking: Vec<Option<u8>>,
    pub within_theorem_constants: bool,
}

/// Stopping distance of the cloud point `xi`: cones around the current plane
/// grow until they hit the set, and the hit either yields a good couple or
/// the plane is replaced by a better-fitting one and the cone grows on.
pub fn stopping_distance(set: &SimplicialSet, cloud: &QuadratureCloud, xi: usize, cfg: &StoppingConfig) -> Result<StoppingResult> {
    let m = cloud.intrinsic_dim();
    cfg.validate(m)?;
    if xi >= cloud.len() {
        return Err(Error::invalid(format!("point index {xi} out of range")));
    }
    let x = cloud.position(xi).to_vec();
    let (delta, eta, lambda) = (cfg.delta, cfg.eta, cfg.lambda);
    let omega = unit_ball_volume(m);

    let mut order: Vec<(f64, usize)> = (0..cloud.len())
        .map(|i| (dist(cloud.position(i), &x), i))
        .filter(|p| p.0 > 0.0)
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let offsets: Vec<Vec<f64>> = order.iter().map(|&(_, i)| sub(cloud.position(i), &x)).collect();

    let in_cone = |h: &Plane, k: usize| h.normal_norm(&offsets[k]) >= delta * order[k].0;
    let first_hit = |h: &Plane, after: f64| (0..order.len()).find(|&k| order[k].0 > after && in_cone(h, k));

    let mut h = cloud.plane(xi);
    let mut rho = 0.0;
    let mut planes = Vec::new();
    let mut radii = Vec::new();
    let mut linking = Vec::new();
    let diam = cloud.diameter();
    let mut limit = 64usize;
    let mut round = 0usize;
    loop {
        let k0 = first_hit(&h, rho).ok_or(Error::NoFirstHit)?;
        let new_rho = order[k0].0;
        if round == 0 {
            limit = limit.max((diam / new_rho).log2().ceil() as usize + 1);
        }
        debug_assert!(radii.last().is_none_or(|&r: &f64| new_rho > 2.0 * r));
        rho = new_rho;
        planes.push(h.clone());
        radii.push(rho);
        linking.push(if cfg.verify_linking {
            h.complement()
                .and_then(|v| SphereProbe::new(x.clone(), 0.75 * rho, v, 64))
                .and_then(|p| linking_mod2(set, &p))
                .ok()
        } else {
            None
        });
        round += 1;

        let finish = |case, y: Vec<f64>, cert, planes, radii, linking| StoppingResult {
            x: x.clone(),
            d_s: rho,
            uncertainty: set.max_edge(),
            case,
            partner: y,
            certificate: cert,
            plane_history: planes,
            radii_history: radii,
            linking,
            within_theorem_constants: cfg.within_theorem_constants(m),
        };

        // Case 1: a first-hit point already forms a good couple
        let ties = (k0..order.len()).take_while(|&k| order[k].0 <= rho * (1.0 + 1e-12));
        for k in ties.filter(|&k| in_cone(&h, k)) {
            let y = cloud.position(order[k].1).to_vec();
            let cert = couple_at_scale(cloud, &x, &y, lambda, eta, rho);
            if cert.certified() {
                return Ok(finish(StopCase::GoodCoupleCase1, y, cert, planes, radii, linking));
            }
        }

        // choose the plane best matching the tangent planes near x
        let ys = cloud.ball(&x, eta * eta * rho);
        let candidates: Vec<usize> = probe_indices(ys.len(), 256).into_iter().map(|i| ys[i]).collect();
        let mut best: Option<(f64, Plane)> = None;
        for &c in &candidates {
            let pc = cloud.plane(c);
            let mut covered = 0.0;
            for &z in &ys {
                if cloud.plane(z).angle(&pc)? <= eta * eta {
                    covered += cloud.weight(z);
                }
            }
            if best.as_ref().is_none_or(|b| covered > b.0) {
                best = Some((covered, pc));
            }
        }
        let (covered, h_star) = best.ok_or(Error::NoFirstHit)?;
        if covered < lambda * omega * eta.powi(2 * m as i32) * rho.powi(m as i32) {
            log::warn!("tangent-plane cell at radius {rho:e} carries less weight than the cover bound");
        }

        // Case 2: a point of the annulus is far from the new plane
        let far = order
            .iter()
            .enumerate()
            .filter(|(_, &(r, _))| r >= rho / 2.0 && r <= 2.0 * rho)
            .map(|(k, &(_, i))| (h_star.normal_norm(&offsets[k]), i))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        if let Some((height, i)) = far {
            if height >= 2.0 * eta * rho {
                let y = cloud.position(i).to_vec();
                let cert = couple_at_scale(cloud, &x, &y, lambda, eta, rho);
                return Ok(finish(StopCase::GoodCoupleCase2, y, cert, planes, radii, linking));
            }
        }

        // Case 3: flat position, continue with the new plane
        if round >= limit {
            return Err(Error::IterationLimit { rounds: round });
        }
        h = h_star;
    }
}

/// A region over which the set is expected to be a graph over `plane`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphPatch {
    pub center: Vec<f64>,
    pub radius: f64,
    pub plane: Plane,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum PatchOutcome {
    Fitted {
        fit: ExponentFit,
        local_energy: f64,
        /// `max |grad f(z) - grad f(w)| / (E^(1/q) |z - w|^mu)` at the fitted exponent
        constant: f64,
        /// the same ratio at exponent one
        ratio_at_one: f64,
    },
    FlatInput,
    /// the projection onto the plane is not injective or the tangent plane is vertical
    Rejected { witness: (usize, usize) },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderReport {
    pub q: f64,
    pub patches: Vec<PatchOutcome>,
    /// smallest fitted exponent over the patches
    pub mu_hat: Option<f64>,
    pub constant: Option<f64>,
}

const MAX_PATCH_POINTS: usize = 1500;

/// Graph gradient at a cloud point: the tangent plane written as the graph
/// of a linear map from `plane` to its complement.
fn graph_gradient(cloud: &QuadratureCloud, z: usize, p: &Plane, c: &Plane) -> Option<DMatrix<f64>> {
    let m = p.dim();
    let hz = cloud.plane(z);
    let b = DMatrix::from_fn(m, m, |a, i| dot(p.basis(a), hz.basis(i)));
    let cm = DMatrix::from_fn(c.dim(), m, |a, i| dot(c.basis(a), hz.basis(i)));
    let sv = b.clone().svd(false, false).singular_values;
    if sv.iter().cloned().fold(f64::INFINITY, f64::min) < 1e-8 {
        return None;
    }
    Some(cm * b.try_inverse()?)
}

fn fit_patch(cloud: &QuadratureCloud, patch: &GraphPatch, q: f64) -> Result<PatchOutcome> {
    let p = &patch.plane;
    if p.dim() != cloud.intrinsic_dim() || p.ambient_dim() != cloud.ambient_dim() {
        return Err(Error::invalid("patch plane must be an m-plane of the ambient space"));
    }
    let c = p.complement()?;
    let all = cloud.ball(&patch.center, patch.radius);
    let idx: Vec<usize> = probe_indices(all.len(), MAX_PATCH_POINTS).into_iter().map(|i| all[i]).collect();
    if idx.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, found: idx.len() });
    }
    let mut grads = Vec::with_capacity(idx.len());
    for (a, &z) in idx.iter().enumerate() {
        match graph_gradient(cloud, z, p, &c) {
            Some(g) => grads.push(g),
            None => {
                let other = idx[if a == 0 { 1 } else { 0 }];
                return Ok(PatchOutcome::Rejected { witness: (z, other) });
            }
        }
    }
    let m = cloud.intrinsic_dim();
    let spacing = idx.iter().map(|&z| cloud.weight(z)).fold(0.0, f64::max).powf(1.0 / m as f64);
    // (planar distance, gradient oscillation) per pair
    let mut pairs = Vec::new();
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            let d = sub(cloud.position(idx[b]), cloud.position(idx[a]));
            let t = norm(&p.project(&d));
            if t <= 1e-12 * norm(&d) {
                return Ok(PatchOutcome::Rejected { witness: (idx[a], idx[b]) });
            }
            pairs.push((t, (&grads[a] - &grads[b]).norm()));
        }
    }
    let max_osc = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    if max_osc < FLAT_TOL {
        return Ok(PatchOutcome::FlatInput);
    }
    let e = local_energy(cloud, &patch.center, patch.radius, q)?.value;
    if !(e > 0.0) {
        return Ok(PatchOutcome::FlatInput);
    }
    // upper envelope of the oscillation on geometric distance bins above the sampling scale
    let t_min = 2.0 * spacing;
    let t_max = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let ratio = std::f64::consts::SQRT_2;
    let nbins = ((t_max / t_min).ln() / ratio.ln()).floor().max(0.0) as usize + 1;
    let mut env = vec![0.0f64; nbins];
    for &(t, o) in &pairs {
        if t >= t_min {
            let k = (((t / t_min).ln() / ratio.ln()).floor() as usize).min(nbins - 1);
            env[k] = env[k].max(o);
        }
    }
    let fit_pairs: Vec<(f64, f64)> = env
        .iter()
        .enumerate()
        .filter(|(_, &o)| o > 0.0)
        .map(|(k, &o)| ((t_min * ratio.powf(k as f64 + 0.5)).ln(), o.ln()))
        .collect();
    let fit = ExponentFit::from_pairs(fit_pairs)?;
    let scale = e.powf(1.0 / q);
    let mu = fit.slope;
    let used = pairs.iter().filter(|p| p.0 >= t_min);
    let constant = used.clone().map(|&(t, o)| o / (scale * t.powf(mu))).fold(0.0, f64::max);
    let ratio_at_one = used.map(|&(t, o)| o / (scale * t)).fold(0.0, f64::max);
    Ok(PatchOutcome::Fitted {
        fit,
        local_energy: e,
        constant,
        ratio_at_one,
    })
}

/// Fits the Hölder exponent of the graph gradient on each patch.
pub fn holder_fit(cloud: &QuadratureCloud, patches: &[GraphPatch], q: f64) -> Result<HolderReport> {
    let outcomes = patches.par_iter().map(|p| fit_patch(cloud, p, q)).collect::<Result<Vec<_>>>()?;
    let mut mu_hat: Option<f64> = None;
    let mut constant: Option<f64> = None;
    for o in &outcomes {
        if let PatchOutcome::Fitted { fit, constant: c, .. } = o {
            mu_hat = Some(mu_hat.map_or(fit.slope, |v| v.min(fit.slope)));
            constant = Some(constant.map_or(*c, |v| v.max(*c)));
        }
    }
    Ok(HolderReport {
        q,
        patches: outcomes,
        mu_hat,
        constant,
    })
}
