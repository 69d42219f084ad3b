//! Linear `m`-planes in `R^n` and the estimates used for nearby planes.
//!
//! A [`Plane`] is stored as an orthonormal frame; projectors are materialized
//! only on demand. The distance between two planes is the operator norm of the
//! difference of their orthogonal projectors, which for planes of equal
//! dimension equals the sine of the largest principal angle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, unit_ball_volume};

/// Orthonormality tolerance accepted by [`Plane::from_frame`].
pub const FRAME_TOL: f64 = 1e-12;
/// Angles below this are reported as "equal planes".
pub const EQUAL_PLANES_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    ambient_dim: usize,
    dim: usize,
    /// `dim` basis vectors of length `ambient_dim`, stored contiguously.
    frame: Vec<f64>,
}

impl Plane {
    /// Builds a plane from an already orthonormal frame (`dim` vectors of length `n`).
    pub fn from_frame(n: usize, frame: Vec<f64>) -> Result<Self> {
        if n == 0 || frame.is_empty() || frame.len() % n != 0 {
            return Err(Error::invalid("frame length must be a positive multiple of n"));
        }
        let m = frame.len() / n;
        if m > n {
            return Err(Error::invalid(format!("plane dimension {m} exceeds ambient {n}")));
        }
        for i in 0..m {
            for j in 0..=i {
                let g = dot(&frame[i * n..(i + 1) * n], &frame[j * n..(j + 1) * n]);
                let want = if i == j { 1.0 } else { 0.0 };
                if (g - want).abs() > FRAME_TOL {
                    return Err(Error::invalid(format!(
                        "frame not orthonormal: <f{i},f{j}> = {g}"
                    )));
                }
            }
        }
        Ok(Plane {
            ambient_dim: n,
            dim: m,
            frame,
        })
    }

    /// Orthonormalizes the given spanning vectors (modified Gram-Schmidt with one
    /// re-orthogonalization pass).
    pub fn span<V: AsRef<[f64]>>(n: usize, vectors: &[V]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid("cannot span a plane from zero vectors"));
        }
        let mut frame: Vec<f64> = Vec::with_capacity(n * vectors.len());
        for (k, v) in vectors.iter().enumerate() {
            let v = v.as_ref();
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
            let scale = norm(v);
            let mut w = v.to_vec();
            for _ in 0..2 {
                for j in 0..k {
                    let f = &frame[j * n..(j + 1) * n];
                    let c = dot(&w, f);
                    for (wi, fi) in w.iter_mut().zip(f) {
                        *wi -= c * fi;
                    }
                }
            }
            let len = norm(&w);
            if scale == 0.0 || len <= 1e-12 * scale {
                return Err(Error::RankDeficient {
                    step: k,
                    residual: len,
                });
            }
            frame.extend(w.iter().map(|x| x / len));
        }
        Ok(Plane {
            ambient_dim: n,
            dim: vectors.len(),
            frame,
        })
    }

    /// Plane spanned by the given coordinate axes.
    pub fn coordinate(n: usize, axes: &[usize]) -> Result<Self> {
        let vectors: Vec<Vec<f64>> = axes
            .iter()
            .map(|&a| {
                let mut e = vec![0.0; n];
                e[a] = 1.0;
                e
            })
            .collect();
        Plane::span(n, &vectors)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let cols: Vec<Vec<f64>> = m.column_iter().map(|c| c.iter().copied().collect()).collect();
        Plane::span(n, &cols)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self) -> &[f64] {
        &self.frame
    }

    pub fn basis(&self, i: usize) -> &[f64] {
        &self.frame[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    /// `n x m` matrix whose columns are the frame vectors.
    pub fn frame_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.ambient_dim, self.dim, &self.frame)
    }

    pub fn projector(&self) -> DMatrix<f64> {
        let f = self.frame_matrix();
        &f * f.transpose()
    }

    /// Coordinates of the orthogonal projection of `v` in the frame.
    pub fn coords(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.basis(i), v)).collect()
    }

    /// Orthogonal projection `pi_P(v)`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let n = self.ambient_dim;
        let mut out = vec![0.0; n];
        for i in 0..self.dim {
            let f = self.basis(i);
            let c = dot(f, v);
            for k in 0..n {
                out[k] += c * f[k];
            }
        }
        out
    }

    /// `Q_P(v) = v - pi_P(v)`.
    pub fn reject(&self, v: &[f64]) -> Vec<f64> {
        let p = self.project(v);
        v.iter().zip(&p).map(|(a, b)| a - b).collect()
    }

    /// `|Q_P(v)|`, computed from the explicit residual so that vectors almost in
    /// the plane keep full relative accuracy.
    #[inline]
    pub fn normal_norm(&self, v: &[f64]) -> f64 {
        let n = self.ambient_dim;
        let m = self.dim;
        let mut coeffs = [0.0f64; 16];
        let mut heap;
        let c: &mut [f64] = if m <= 16 {
            &mut coeffs[..m]
        } else {
            heap = vec![0.0; m];
            &mut heap
        };
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = dot(&self.frame[i * n..(i + 1) * n], v);
        }
        let mut acc = 0.0;
        for k in 0..n {
            let mut r = v[k];
            for (i, ci) in c.iter().enumerate() {
                r -= ci * self.frame[i * n + k];
            }
            acc += r * r;
        }
        acc.sqrt()
    }

    /// `dist(y, x + P)`.
    pub fn dist_to_affine(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        self.normal_norm(&d)
    }

    /// The orthogonal complement `P^perp`.
    pub fn complement(&self) -> Result<Plane> {
        let n = self.ambient_dim;
        if self.dim == n {
            return Err(Error::pre("complement of the whole space is trivial"));
        }
        // project the standard basis vectors, keep the ones with the largest residuals
        let mut cands: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                self.reject(&e)
            })
            .collect();
        let mut frame: Vec<f64> = Vec::new();
        let mut count = 0;
        while count < n - self.dim {
            // pick the candidate with largest residual after removing chosen vectors
            let (best, _) = cands
                .iter()
                .enumerate()
                .map(|(i, c)| (i, norm(c)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty candidates");
            let len = norm(&cands[best]);
            if len < 1e-8 {
                return Err(Error::RankDeficient {
                    step: count,
                    residual: len,
                });
            }
            let f: Vec<f64> = cands[best].iter().map(|x| x / len).collect();
            for c in cands.iter_mut() {
                let s = dot(c, &f);
                for (ci, fi) in c.iter_mut().zip(&f) {
                    *ci -= s * fi;
                }
            }
            frame.extend_from_slice(&f);
            count += 1;
        }
        // one more orthogonalization for cleanliness
        let vecs: Vec<Vec<f64>> = frame.chunks(n).map(|c| c.to_vec()).collect();
        Plane::span(n, &vecs)
    }

    fn check_same_shape(&self, other: &Plane) -> Result<()> {
        if self.ambient_dim != other.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                found: other.ambient_dim,
            });
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// `ang(P1, P2) = ||pi_P1 - pi_P2||`.
    ///
    /// For planes of equal dimension this is the largest singular value of
    /// `Q_P1 F_2`, where `F_2` is the frame of `P2` (the sine of the largest
    /// principal angle); computing it this way avoids the cancellation in
    /// `sqrt(1 - cos^2)` for nearly equal planes.
    pub fn angle(&self, other: &Plane) -> Result<f64> {
        self.check_same_shape(other)?;
        let n = self.ambient_dim;
        let m = self.dim;
        if m == n {
            return Ok(0.0);
        }
        let mut resid = DMatrix::<f64>::zeros(n, m);
        for j in 0..m {
            let r = self.reject(other.basis(j));
            for k in 0..n {
                resid[(k, j)] = r[k];
            }
        }
        let sv = resid.singular_values();
        let s = sv.iter().copied().fold(0.0, f64::max);
        Ok(s.min(1.0))
    }

    /// Upper bound on the angle from the Frobenius norm of the projector
    /// difference, `||P1-P2||_F^2 = 2m - 2 ||F1^T F2||_F^2`.
    pub fn angle_upper_bound_frobenius(&self, other: &Plane) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..other.dim {
                let c = dot(self.basis(i), other.basis(j));
                s += c * c;
            }
        }
        (self.dim as f64 + other.dim as f64 - 2.0 * s).max(0.0).sqrt()
    }

    pub fn same_span(&self, other: &Plane) -> Result<bool> {
        Ok(self.angle(other)? <= EQUAL_PLANES_TOL)
    }

    /// Applies an `n x n` linear map (given row-major) to the frame and re-orthonormalizes.
    pub fn transformed(&self, rows: &DMatrix<f64>) -> Result<Plane> {
        let f = rows * self.frame_matrix();
        Plane::from_matrix(&f)
    }

    /// Weighted average of planes: top-`m` eigenvectors of the weighted mean projector.
    pub fn weighted_mean<'a, I>(planes: I) -> Result<Plane>
    where
        I: IntoIterator<Item = (&'a Plane, f64)>,
    {
        let mut acc: Option<DMatrix<f64>> = None;
        let mut dims = (0, 0);
        for (p, w) in planes {
            let proj = p.projector() * w;
            dims = (p.ambient_dim, p.dim);
            acc = Some(match acc {
                Some(a) => a + proj,
                None => proj,
            });
        }
        let acc = acc.ok_or_else(|| Error::invalid("empty plane average"))?;
        top_eigenvectors(&acc, dims.1).map_err(|_| Error::invalid("degenerate plane average"))
    }
}

/// Orthonormal top-`k` eigenvectors of a symmetric matrix, as a plane.
pub fn top_eigenvectors(sym: &DMatrix<f64>, k: usize) -> Result<Plane> {
    let eig = sym.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let n = sym.nrows();
    let cols: Vec<Vec<f64>> = idx[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    Plane::span(n, &cols)
}

/// A closed slab `{y : |Q_P(y)| <= half_width}` around a linear plane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Slab {
    pub plane: Plane,
    pub half_width: f64,
}

impl Slab {
    pub fn new(plane: Plane, half_width: f64) -> Result<Self> {
        if !(half_width >= 0.0) {
            return Err(Error::invalid("slab half-width must be nonnegative"));
        }
        Ok(Slab { plane, half_width })
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.plane.normal_norm(y) <= self.half_width
    }
}

/// The explicit constants attached to the plane estimates, for dimension `m`
/// and energy exponent `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    pub m: usize,
    pub q: f64,
    pub omega_m: f64,
    pub eps1: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub kappa: f64,
    pub mu: f64,
}

impl LemmaConstants {
    pub fn new(m: usize, q: f64) -> Self {
        let mf = m as f64;
        let ten_m = 10f64.powi(m as i32);
        let omega_m = unit_ball_volume(m);
        let c3 = 14.0 * mf * 20f64.powi(m as i32);
        LemmaConstants {
            m,
            q,
            omega_m,
            eps1: 0.1 / (ten_m + 1.0),
            c1: 2.0 * (ten_m + 1.0),
            c2: 4.0 * mf * (ten_m + 1.0),
            c3,
            c4: 3.0 * (c3 + 1.0),
            c5: 16.0 * mf * 9f64.powf(q) / (omega_m * omega_m),
            kappa: (q - 2.0 * mf) / (q + 4.0 * mf),
            mu: 1.0 - 2.0 * mf / q,
        }
    }

    /// Whether `q` lies in the range covered by the regularity theorems.
    pub fn supercritical(&self) -> bool {
        self.q > 2.0 * self.m as f64
    }
}

/// Per-step record of the perturbed Gram-Schmidt process.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GramSchmidtLog {
    pub eps: f64,
    /// `|v_k - h_k|`
    pub v_errors: Vec<f64>,
    /// `| |v_k| - 1 |`
    pub norm_errors: Vec<f64>,
    /// `|u_k - e_k|`
    pub u_errors: Vec<f64>,
    /// angle between input and output planes
    pub angle: f64,
    /// `c2 * eps`
    pub angle_bound: f64,
    pub c1: f64,
}

impl GramSchmidtLog {
    /// Checks `|v_k-h_k| < 10^k eps`, `||v_k|-1| < (10^k+1) eps`,
    /// `|u_k-e_k| < c1 eps` and `angle <= c2 eps` (k is 1-based).
    pub fn bounds_hold(&self) -> bool {
        let eps = self.eps;
        let per_step = self.v_errors.iter().enumerate().all(|(i, &e)| {
            let p = 10f64.powi(i as i32 + 1);
            e < p * eps && self.norm_errors[i] < (p + 1.0) * eps && self.u_errors[i] < self.c1 * eps
        });
        per_step && self.angle <= self.angle_bound
    }
}

/// Gram-Schmidt orthogonalization of vectors `h_i` that perturb the frame of
/// `base` by less than `eps`. Returns the spanned plane and the error log.
pub fn gram_schmidt_perturbed<V: AsRef<[f64]>>(
    base: &Plane,
    h: &[V],
    eps: f64,
) -> Result<(Plane, GramSchmidtLog)> {
    let n = base.ambient_dim();
    let l = base.dim();
    if h.len() != l {
        return Err(Error::DimensionMismatch {
            expected: l,
            found: h.len(),
        });
    }
    let consts = LemmaConstants::new(l, 2.0 * l as f64 + 1.0);
    if !(eps > 0.0 && eps < consts.eps1) {
        return Err(Error::pre(format!(
            "perturbation bound {eps} must lie in (0, eps1 = {})",
            consts.eps1
        )));
    }
    for (i, hi) in h.iter().enumerate() {
        let hi = hi.as_ref();
        if hi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: hi.len(),
            });
        }
        let d = crate::linalg::dist(hi, base.basis(i));
        if !(d < eps) {
            return Err(Error::pre(format!("|h_{i} - e_{i}| = {d} is not below {eps}")));
        }
    }
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(l);
    for (k, hk) in h.iter().enumerate() {
        let hk = hk.as_ref();
        let mut vk = hk.to_vec();
        for vj in v.iter() {
            let c = dot(hk, vj) / dot(vj, vj);
            for (a, b) in vk.iter_mut().zip(vj) {
                *a -= c * b;
            }
        }
        let len = norm(&vk);
        if len <= 1e-12 {
            return Err(Error::RankDeficient {
                step: k,
                residual: len,
            });
        }
        v.push(vk);
    }
    let mut frame = Vec::with_capacity(n * l);
    let mut v_errors = Vec::with_capacity(l);
    let mut norm_errors = Vec::with_capacity(l);
    let mut u_errors = Vec::with_capacity(l);
    for (k, vk) in v.iter().enumerate() {
        let len = norm(vk);
        v_errors.push(crate::linalg::dist(vk, h[k].as_ref()));
        norm_errors.push((len - 1.0).abs());
        let u: Vec<f64> = vk.iter().map(|x| x / len).collect();
        u_errors.push(crate::linalg::dist(&u, base.basis(k)));
        frame.extend_from_slice(&u);
    }
    // classical GS output is orthonormal to rounding; re-span to meet FRAME_TOL
    let out = Plane::span(n, &frame.chunks(n).collect::<Vec<_>>())?;
    let angle = base.angle(&out)?;
    Ok((
        out,
        GramSchmidtLog {
            eps,
            v_errors,
            norm_errors,
            u_errors,
            angle,
            angle_bound: consts.c2 * eps,
            c1: consts.c1,
        },
    ))
}

// ---------------------------------------------------------------------------
// Slab intersections S(H1, H2) = {y : dist(y, H1) <= 1, dist(y, H2) <= 1}

/// Membership oracle for `pi_H1(S(H1, H2))`, restricted to `H1`.
struct SlabPairProjection {
    n: usize,
    h2: Plane,
    /// eigen-decomposition of `A^T A` with `A = Q_H2 N1`
    eig_vals: Vec<f64>,
    eig_vecs: DMatrix<f64>,
    a: DMatrix<f64>,
}

impl SlabPairProjection {
    fn new(h1: &Plane, h2: &Plane) -> Result<Self> {
        let n = h1.ambient_dim();
        let n1 = h1.complement()?;
        let k = n1.dim();
        let mut a = DMatrix::<f64>::zeros(n, k);
        for j in 0..k {
            let col = h2.reject(n1.basis(j));
            for i in 0..n {
                a[(i, j)] = col[i];
            }
        }
        let ata = a.transpose() * &a;
        let eig = ata.symmetric_eigen();
        Ok(SlabPairProjection {
            n,
            h2: h2.clone(),
            eig_vals: eig.eigenvalues.iter().copied().collect(),
            eig_vecs: eig.eigenvectors,
            a,
        })
    }

    /// `min { |Q_H2(p + z)| : z in H1^perp, |z| <= 1 }` for `p` in `H1`.
    fn min_normal(&self, p: &[f64]) -> f64 {
        let b = DVector::from_vec(self.h2.reject(p));
        let g = self.a.transpose() * &b;
        let gp = self.eig_vecs.transpose() * &g;
        let k = self.eig_vals.len();
        let scale = self.eig_vals.iter().copied().fold(0.0, f64::max).max(1e-300);
        let z_of = |lambda: f64| -> DVector<f64> {
            let mut c = DVector::<f64>::zeros(k);
            for i in 0..k {
                let den = self.eig_vals[i] + lambda;
                if den > 1e-14 * scale {
                    c[i] = -gp[i] / den;
                }
            }
            &self.eig_vecs * c
        };
        let mut z = z_of(0.0);
        if z.norm() > 1.0 {
            let mut lo = 0.0;
            let mut hi = g.norm().max(1e-300);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if z_of(mid).norm() > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            z = z_of(hi);
        }
        (&b + &self.a * z).norm()
    }

    fn contains(&self, p: &[f64]) -> bool {
        self.min_normal(p) <= 1.0 + 1e-12
    }

    /// Exit time `g(w) = sup { t : t w in pi_H1(S) }` for a unit `w` in `H1`;
    /// `f64::INFINITY` when the ray never leaves.
    fn exit_time(&self, w: &[f64]) -> f64 {
        let at = |t: f64| -> Vec<f64> { w.iter().map(|x| x * t).collect() };
        let mut lo = 1.0;
        let mut hi = 2.0;
        while self.contains(&at(hi)) {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                return f64::INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.contains(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * hi {
                break;
            }
        }
        lo
    }
}

/// Certificate that `pi_H1(S(H1, H2))` lies in a strip around an `(m-1)`-plane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StripCertificate {
    pub alpha: f64,
    /// unit direction in `H1` attaining the smallest exit time
    pub w0: Vec<f64>,
    /// `W = w0^perp` inside `H1`; `None` when `m = 1` (then `W = {0}`)
    pub strip_plane: Option<Plane>,
    /// smallest exit time `inf g`, attained along `w0`
    pub exit_time: f64,
    /// certified half-width: the larger of the exit time and the sampled extent along `w0`
    pub width: f64,
    /// `5 c2 / alpha`
    pub bound: f64,
    pub sample_count: usize,
    /// largest distance to `W` among sampled points of `pi_H1(S)`
    pub sampled_max_distance: f64,
    /// sampled directions whose exit time ties with the minimum (relative 1e-9)
    pub tied_directions: usize,
}

impl StripCertificate {
    pub fn holds(&self) -> bool {
        self.width <= self.bound && self.sampled_max_distance <= self.width
    }
}

/// Finds the narrowest strip containing `pi_H1(S(H1, H2))` and certifies it by
/// sampling. Requires `0 < ang(H1, H2) < eps1` and `m < n`.
pub fn slab_strip_width(h1: &Plane, h2: &Plane) -> Result<StripCertificate> {
    slab_strip_width_sampled(h1, h2, 100_000)
}

/// [`slab_strip_width`] with a custom size for the containment grid.
pub fn slab_strip_width_sampled(h1: &Plane, h2: &Plane, grid_points: usize) -> Result<StripCertificate> {
    let alpha = h1.angle(h2)?;
    let n = h1.ambient_dim();
    let m = h1.dim();
    if m == n {
        return Err(Error::pre("slab geometry needs m < n"));
    }
    let consts = LemmaConstants::new(m, 2.0 * m as f64 + 1.0);
    if !(alpha > EQUAL_PLANES_TOL && alpha < consts.eps1) {
        return Err(Error::pre(format!(
            "angle {alpha} must lie in (0, eps1 = {})",
            consts.eps1
        )));
    }
    let proj = SlabPairProjection::new(h1, h2)?;
    let dir = |coords: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (i, c) in coords.iter().enumerate() {
            crate::linalg::axpy(&mut v, *c, h1.basis(i));
        }
        v
    };

    // sample unit directions of H1 (mod sign), then refine the best one
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_57a1);
    let sampled: Vec<Vec<f64>> = match m {
        1 => vec![vec![1.0]],
        2 => (0..360)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / 360.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => (0..2000)
            .map(|_| {
                let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let l = norm(&v);
                v.into_iter().map(|x| x / l).collect()
            })
            .collect(),
    };
    let times: Vec<f64> = sampled.iter().map(|c| proj.exit_time(&dir(c))).collect();
    let (best_idx, _) = times
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty samples");
    let mut best = sampled[best_idx].clone();
    let mut best_t = times[best_idx];
    if m == 2 {
        let step = std::f64::consts::PI / 360.0;
        let phi0 = best[1].atan2(best[0]);
        let g = |phi: f64| proj.exit_time(&dir(&[phi.cos(), phi.sin()]));
        let (phi, t) = golden_section(g, phi0 - step, phi0 + step, 60);
        if t < best_t {
            best = vec![phi.cos(), phi.sin()];
            best_t = t;
        }
    } else if m > 2 {
        // golden-section along great circles through the current best
        let mut span = 0.05;
        for _ in 0..6 {
            for axis in 0..m {
                let mut other = vec![0.0; m];
                other[axis] = 1.0;
                let c = dot(&other, &best);
                for (o, b) in other.iter_mut().zip(&best) {
                    *o -= c * b;
                }
                let l = norm(&other);
                if l < 1e-9 {
                    continue;
                }
                let other: Vec<f64> = other.iter().map(|x| x / l).collect();
                let rot = |a: f64| -> Vec<f64> {
                    best.iter().zip(&other).map(|(b, o)| a.cos() * b + a.sin() * o).collect()
                };
                let (a, t) = golden_section(|a| proj.exit_time(&dir(&rot(a))), -span, span, 40);
                if t < best_t {
                    best = rot(a);
                    best_t = t;
                }
            }
            span *= 0.3;
        }
    }
    let tied_directions = times
        .iter()
        .filter(|&&t| (t - best_t).abs() <= 1e-9 * best_t)
        .count();
    let w0 = dir(&best);
    let strip_plane = if m > 1 {
        // W = w0^perp within H1
        let mut vecs: Vec<Vec<f64>> = Vec::new();
        for i in 0..m {
            let mut b = h1.basis(i).to_vec();
            let c = dot(&b, &w0);
            for (bi, wi) in b.iter_mut().zip(&w0) {
                *bi -= c * wi;
            }
            vecs.push(b);
        }
        vecs.sort_by(|a, b| norm(b).total_cmp(&norm(a)));
        let mut chosen: Vec<Vec<f64>> = Vec::new();
        for v in vecs {
            if chosen.len() == m - 1 {
                break;
            }
            let mut trial = chosen.clone();
            trial.push(v);
            if Plane::span(n, &trial).is_ok() {
                chosen = trial;
            }
        }
        Some(Plane::span(n, &chosen)?)
    } else {
        None
    };

    // sampled containment: boundary points t*g(w)*w, plus a stratified grid of S
    let mut max_d: f64 = 0.0;
    let mut count = 0usize;
    for c in &sampled {
        let w = dir(c);
        let t = proj.exit_time(&w);
        let proj_len = dot(&w, &w0).abs();
        if t.is_infinite() {
            if proj_len > 1e-9 {
                max_d = f64::INFINITY;
            }
        } else {
            max_d = max_d.max(t * proj_len);
        }
        count += 1;
    }
    let radius = (10.0 / alpha).min(2.0 * consts.c2 * 5.0 / alpha);
    let per_axis = ((grid_points as f64).powf(1.0 / m as f64)).floor().max(2.0) as usize;
    let mut idx = vec![0usize; m];
    'grid: loop {
        let coords: Vec<f64> = idx
            .iter()
            .map(|&i| -radius + 2.0 * radius * (i as f64 + 0.5) / per_axis as f64)
            .collect();
        let p = dir(&coords);
        if proj.contains(&p) {
            max_d = max_d.max(dot(&p, &w0).abs());
        }
        count += 1;
        for d in 0..m {
            idx[d] += 1;
            if idx[d] < per_axis {
                continue 'grid;
            }
            idx[d] = 0;
        }
        break;
    }
    Ok(StripCertificate {
        alpha,
        w0,
        strip_plane,
        exit_time: best_t,
        width: best_t.max(max_d),
        bound: 5.0 * consts.c2 / alpha,
        sample_count: count,
        sampled_max_distance: max_d,
        tied_directions,
    })
}

/// Grid estimate of `H^m(pi_H1(S(H1,H2)) ∩ B(a, s))` for `a` in `H1` (given in
/// ambient coordinates), with `per_axis` cells along each of the `m` axes.
pub fn strip_ball_measure(h1: &Plane, h2: &Plane, a: &[f64], s: f64, per_axis: usize) -> Result<f64> {
    let proj = SlabPairProjection::new(h1, h2)?;
    let m = h1.dim();
    let ac = h1.coords(a);
    let cell = 2.0 * s / per_axis as f64;
    let mut idx = vec![0usize; m];
    let mut hits = 0usize;
    'grid: loop {
        let coords: Vec<f64> = idx
            .iter()
            .zip(&ac)
            .map(|(&i, c)| c - s + cell * (i as f64 + 0.5))
            .collect();
        let dc: f64 = coords.iter().zip(&ac).map(|(x, c)| (x - c) * (x - c)).sum();
        if dc <= s * s {
            let mut p = vec![0.0; proj.n];
            for (i, c) in coords.iter().enumerate() {
                crate::linalg::axpy(&mut p, *c, h1.basis(i));
            }
            if proj.contains(&p) {
                hits += 1;
            }
        }
        for d in 0..m {
            idx[d] += 1;
            if idx[d] < per_axis {
                continue 'grid;
            }
            idx[d] = 0;
        }
        break;
    }
    Ok(hits as f64 * cell.powi(m as i32))
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Projected measure of a cube in `H2` onto `H1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectedMeasure {
    pub angle: f64,
    /// `H^m(pi_H1(cube)) / H^m(cube)`
    pub ratio: f64,
    /// `1 - m * angle * 2^m`
    pub lower_bound: f64,
}

impl ProjectedMeasure {
    pub fn holds(&self) -> bool {
        self.ratio >= self.lower_bound
    }
}

/// Ratio of the projected to the original measure of an `m`-cube of side
/// `cube_side` in `H2`, via the Gram determinant of the projected edges.
/// Requires `ang(H1, H2) < 1 / (m 2^m)`.
pub fn projected_measure_ratio(h1: &Plane, h2: &Plane, cube_side: f64) -> Result<ProjectedMeasure> {
    if !(cube_side > 0.0) {
        return Err(Error::invalid("cube side must be positive"));
    }
    let angle = h1.angle(h2)?;
    let m = h1.dim();
    let limit = 1.0 / (m as f64 * 2f64.powi(m as i32));
    if angle >= limit {
        return Err(Error::pre(format!(
            "angle {angle} must be below 1/(m 2^m) = {limit}"
        )));
    }
    // projected edges f_i = pi_H1(side * e_i), coordinates in H1's frame
    let mut c = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for i in 0..m {
            c[(i, j)] = cube_side * dot(h1.basis(i), h2.basis(j));
        }
    }
    let gram = c.transpose() * &c;
    let vol = gram.determinant().max(0.0).sqrt();
    Ok(ProjectedMeasure {
        angle,
        ratio: vol / cube_side.powi(m as i32),
        lower_bound: 1.0 - m as f64 * angle * 2f64.powi(m as i32),
    })
}

/// A uniformly random plane (QR of a Gaussian-like matrix).
pub fn random_plane<R: Rng>(rng: &mut R, n: usize, m: usize) -> Plane {
    loop {
        let vecs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| gaussian(rng)).collect())
            .collect();
        if let Ok(p) = Plane::span(n, &vecs) {
            return p;
        }
    }
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
