//! Acceptance battery. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; pass a criterion number to run
//! just that one.

use std::error::Error;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpsurf_core::complex::probe_indices;
use tpsurf_core::flow::{flow_run, gradient_discrepancy, FlowPolicy};
use tpsurf_core::grassmann::{
    gram_schmidt_perturbed, projected_measure_ratio, random_plane, slab_strip_width_sampled, strip_ball_measure,
    LemmaConstants,
};
use tpsurf_core::linkdiag::{linking_mod2, probe_distance, SphereProbe};
use tpsurf_core::regdiag::{
    ahlfors_curve, ahlfors_radius, beta_decay_fit, good_couple_search, holder_fit, stopping_distance, BetaOptions,
    DecayFit, GraphPatch, PatchOutcome, StoppingConfig,
};
use tpsurf_core::tpe::{energy, inv_rtp, scaling_check, EnergyOptions};
use tpsurf_core::{shapes, Plane, QuadratureCloud, SimplicialSet};

type Outcome = Result<String, Box<dyn Error>>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+).into());
        }
    };
}

fn total_energy(set: &SimplicialSet, q: f64) -> Result<f64, Box<dyn Error>> {
    Ok(energy(&QuadratureCloud::centroid(set), &EnergyOptions::exact(q))?.total_energy)
}

fn log_radii(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn circle_energy() -> Outcome {
    let target = 4.0 * PI * PI;
    let mut errs = Vec::new();
    for n in [128, 256, 512] {
        let e = total_energy(&shapes::circle(n, 1.0)?, 4.0)?;
        errs.push((e - target).abs() / target);
    }
    ensure!(errs[2] < 0.01, "512-gon error {:.3e}", errs[2]);
    ensure!(errs[0] > errs[1] && errs[1] > errs[2], "errors not decreasing: {errs:?}");
    Ok(format!("relative errors {:.2e}, {:.2e}, {:.2e}", errs[0], errs[1], errs[2]))
}

fn sphere_energy() -> Outcome {
    let target = 16.0 * PI * PI;
    let e = total_energy(&shapes::icosphere(5, 1.0)?, 6.0)?;
    let err = (e - target).abs() / target;
    ensure!(err < 0.02, "E = {e}, error {err:.3e}");
    Ok(format!("E = {e:.4}, relative error {err:.2e}"))
}

fn scaling_law() -> Outcome {
    let circle = QuadratureCloud::centroid(&shapes::circle(64, 1.0)?);
    let sphere = QuadratureCloud::centroid(&shapes::icosphere(2, 1.0)?);
    let lambdas = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut worst = 0.0f64;
    for (cloud, q) in [(&circle, 4.0), (&sphere, 6.0), (&sphere, 4.0), (&circle, 2.0)] {
        let fit = scaling_check(cloud, q, &lambdas)?;
        let m = cloud.intrinsic_dim() as f64;
        ensure!(fit.expected == 2.0 * m - q, "expected slope {}", fit.expected);
        let err = (fit.slope - (2.0 * m - q)).abs();
        ensure!(err <= 1e-9, "m = {m}, q = {q}: slope {}", fit.slope);
        worst = worst.max(err);
    }
    Ok(format!("worst slope error {worst:.1e}"))
}

fn ahlfors() -> Outcome {
    let cfg = StoppingConfig::default_for(3, 2);
    let q = 6.0;
    let mut min_ratio = f64::INFINITY;
    for set in [shapes::icosphere(3, 1.0)?, shapes::torus(1.0, 0.4, 48, 24)?] {
        let r1 = ahlfors_radius(2, q, cfg.lambda, cfg.eta, total_energy(&set, q)?)?;
        let probes: Vec<Vec<f64>> = probe_indices(set.num_vertices(), 12)
            .into_iter()
            .map(|i| set.vertex(i).to_vec())
            .collect();
        let curve = ahlfors_curve(&set, &probes, &[r1, 0.5 * r1, 0.05, 0.1, 0.2], Some(r1))?;
        for s in curve.samples.iter().filter(|s| s.radius <= r1) {
            ensure!(s.ratio >= 0.5, "ratio {} at r = {:.3e} <= R_1", s.ratio, s.radius);
            min_ratio = min_ratio.min(s.ratio);
        }
    }

    let finger = shapes::thin_finger()?;
    let r1 = ahlfors_radius(2, q, cfg.lambda, cfg.eta, total_energy(&finger, q)?)?;
    let probes: Vec<Vec<f64>> = probe_indices(finger.num_vertices(), 64)
        .into_iter()
        .map(|i| finger.vertex(i).to_vec())
        .collect();
    let curve = ahlfors_curve(&finger, &probes, &[r1, 1.05 * r1, 0.005, 0.05, 0.1, 0.2], Some(r1))?;
    let dips: Vec<f64> = curve.samples.iter().filter(|s| s.below_half).map(|s| s.radius).collect();
    ensure!(!dips.is_empty(), "the thin finger never dips below 1/2");
    let witnesses = curve
        .samples
        .iter()
        .filter(|s| s.radius <= 1.05 * r1 && s.ratio < 0.95 * 0.5)
        .count();
    ensure!(witnesses == 0, "{witnesses} witnesses below the bound");
    ensure!(dips.iter().all(|&r| r > r1), "dip at or below R_1");
    Ok(format!(
        "min ratio at r <= R_1 on smooth shapes {min_ratio:.4}; finger dips from r = {:.3} > R_1 = {r1:.2e}",
        dips.iter().cloned().fold(f64::INFINITY, f64::min)
    ))
}

fn decay_slope(set: &SimplicialSet, lo: f64, hi: f64) -> Result<f64, Box<dyn Error>> {
    let cloud = QuadratureCloud::centroid(set);
    let probes: Vec<Vec<f64>> = probe_indices(cloud.len(), 8)
        .into_iter()
        .map(|i| cloud.position(i).to_vec())
        .collect();
    match beta_decay_fit(&cloud, &probes, &log_radii(lo, hi, 6), &BetaOptions::default())? {
        DecayFit::Fit(f) => Ok(f.slope),
        DecayFit::FlatInput => Err("curved input reported flat".into()),
    }
}

fn beta_decay() -> Outcome {
    // beta = d/2 exactly on the unit sphere, slope one at every resolved scale
    let sphere = decay_slope(&shapes::icosphere(5, 1.0)?, 0.1, 1.0)?;
    ensure!((sphere - 1.0).abs() <= 0.1, "sphere slope {sphere}");
    let kappa = LemmaConstants::new(2, 6.0).kappa.max(0.125);
    let capsule = decay_slope(&shapes::capsule(0.5, 2.0, 64, 0.04)?, 0.05, 0.5)?;
    ensure!(capsule >= 2.0 * kappa, "capsule slope {capsule} < 2 kappa = {}", 2.0 * kappa);
    Ok(format!("sphere slope {sphere:.4}; capsule slope {capsule:.4} >= {:.4}", 2.0 * kappa))
}

fn patches(cloud: &QuadratureCloud, radius: f64) -> Vec<GraphPatch> {
    probe_indices(cloud.len(), 4)
        .into_iter()
        .map(|i| GraphPatch {
            center: cloud.position(i).to_vec(),
            radius,
            plane: cloud.plane(i),
        })
        .collect()
}

fn max_lipschitz(set: &SimplicialSet, radius: f64) -> Result<f64, Box<dyn Error>> {
    let cloud = QuadratureCloud::centroid(set);
    let report = holder_fit(&cloud, &patches(&cloud, radius), 6.0)?;
    let mut worst = 0.0f64;
    for p in &report.patches {
        match p {
            PatchOutcome::Fitted { ratio_at_one, .. } => worst = worst.max(*ratio_at_one),
            other => return Err(format!("capsule patch not fitted: {other:?}").into()),
        }
    }
    Ok(worst)
}

fn holder() -> Outcome {
    let sphere = QuadratureCloud::centroid(&shapes::icosphere(4, 1.0)?);
    let report = holder_fit(&sphere, &patches(&sphere, 0.5), 6.0)?;
    let mu = report.mu_hat.ok_or("no sphere patch fitted")?;
    ensure!(mu >= 1.0 / 3.0, "sphere mu_hat {mu}");

    // gradient of the radius-1/2 profile graph over its tangent line has
    // Lipschitz constant u''(t) = r^2 / (r^2 - t^2)^(3/2) at the patch edge t
    let (r, t) = (0.5f64, 0.25f64);
    let lip = r * r / (r * r - t * t).powf(1.5);
    let coarse = max_lipschitz(&shapes::capsule(0.5, 2.0, 48, 0.08)?, t)?;
    let fine = max_lipschitz(&shapes::capsule(0.5, 2.0, 64, 0.04)?, t)?;
    ensure!(fine <= 1.15 * lip && coarse <= 1.15 * lip, "ratios {coarse}, {fine} vs {lip}");
    ensure!((fine - coarse).abs() / coarse < 0.1, "ratio not settling: {coarse} -> {fine}");
    Ok(format!(
        "sphere mu_hat {mu:.3}; capsule Lipschitz ratio {coarse:.3} -> {fine:.3} (analytic {lip:.3})"
    ))
}

fn cone() -> Outcome {
    let mut growth = Vec::new();
    for q in [4.0, 5.0] {
        let mut cone = Vec::new();
        let mut control = Vec::new();
        for level in 0..=4 {
            cone.push(total_energy(&shapes::teardrop(0.5, 1.0, 8 << level, 32)?, q)?);
            control.push(total_energy(&shapes::rounded_teardrop(0.5, 1.0, 3, 3 << level, 32)?, q)?);
        }
        ensure!(cone.windows(2).all(|w| w[1] > w[0]), "q = {q}: cone energies {cone:?}");
        let g = cone[4] / cone[0];
        ensure!(g >= 10.0, "q = {q}: growth only {g}");
        let inc: Vec<f64> = control.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        ensure!(inc[3] < inc[2] && inc[2] < inc[1], "q = {q}: control increments {inc:?}");
        let rel = inc[3] / control[4];
        ensure!(rel < 1e-3, "q = {q}: control still moving by {rel:.2e}");
        growth.push(format!("q = {q}: x{g:.3e}, control settles to {:.4} ({rel:.1e})", control[4]));
    }
    Ok(growth.join("; "))
}

const TRIALS: usize = 10_000;

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn perturbed(rng: &mut ChaCha8Rng, base: &Plane, eps: f64) -> Vec<Vec<f64>> {
    (0..base.dim())
        .map(|i| {
            let g = gaussian_vec(rng, base.ambient_dim());
            let s = rng.random::<f64>() * eps / norm(&g);
            base.basis(i).iter().zip(&g).map(|(e, x)| e + s * x).collect()
        })
        .collect()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let n = rng.random_range(2..=6);
    (n, rng.random_range(1..n))
}

fn plane_lemmas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = [0usize; 4];

    for _ in 0..TRIALS {
        let (n, l) = dims(&mut rng);
        let x = random_plane(&mut rng, n, l);
        let scale = 10f64.powf(-rng.random_range(1.0..6.0));
        let h = perturbed(&mut rng, &x, scale);
        let y = Plane::span(n, &h)?;
        let alpha = (0..l)
            .map(|j| dist(x.basis(j), y.basis(j)))
            .fold(0.0, f64::max);
        violations[0] += usize::from(x.angle(&y)? > 2.0 * l as f64 * alpha + 1e-12);
    }

    for _ in 0..TRIALS {
        let (n, l) = dims(&mut rng);
        let l = l.min(4);
        let base = random_plane(&mut rng, n, l);
        let eps = LemmaConstants::new(l, 2.0 * l as f64 + 1.0).eps1 / 2.0;
        let h = perturbed(&mut rng, &base, eps);
        let (out, log) = gram_schmidt_perturbed(&base, &h, eps)?;
        let spans = Plane::span(n, &h)?.angle(&out)? <= 1e-10;
        violations[1] += usize::from(!(log.bounds_hold() && spans));
    }

    let pairs = 200;
    for _ in 0..pairs {
        let n = rng.random_range(2..=4);
        let m = rng.random_range(1..n).min(2);
        let eps1 = LemmaConstants::new(m, 2.0 * m as f64 + 1.0).eps1;
        let h1 = random_plane(&mut rng, n, m);
        let h2 = loop {
            let p = Plane::span(n, &perturbed(&mut rng, &h1, eps1 / (4.0 * m as f64)))?;
            let a = h1.angle(&p)?;
            if a > 1e-9 && a < eps1 {
                break p;
            }
        };
        let cert = slab_strip_width_sampled(&h1, &h2, 2000)?;
        ensure!(cert.holds(), "strip certificate fails: {cert:?}");
        let d = cert.width;
        for _ in 0..TRIALS / pairs {
            let mut a = vec![0.0; n];
            for i in 0..m {
                let c = rng.random_range(-2.0..2.0) * d;
                for (x, b) in a.iter_mut().zip(h1.basis(i)) {
                    *x += c * b;
                }
            }
            let s = d * rng.random_range(0.1..3.0);
            let per_axis = if m == 1 { 400 } else { 40 };
            let est = strip_ball_measure(&h1, &h2, &a, s, per_axis)?;
            // grid cells cut by the ball boundary or the strip edges
            let cell = 2.0 * s / per_axis as f64;
            let boundary = if m == 1 {
                4.0 * cell
            } else {
                4.0 * ((2.0 * PI * s + 8.0 * s) / cell + 4.0) * cell * cell
            };
            let bound = 2f64.powi(m as i32) * s.powi(m as i32 - 1) * d;
            violations[2] += usize::from(est > bound + boundary);
        }
    }

    for _ in 0..TRIALS {
        let (n, m) = dims(&mut rng);
        let m = m.min(4);
        let eps = 0.5 / (m as f64 * 2f64.powi(m as i32));
        let h1 = random_plane(&mut rng, n, m);
        let h2 = loop {
            let p = Plane::span(n, &perturbed(&mut rng, &h1, eps / (2.0 * m as f64)))?;
            if h1.angle(&p)? <= eps {
                break p;
            }
        };
        let r = projected_measure_ratio(&h1, &h2, rng.random_range(0.1..10.0))?;
        violations[3] += usize::from(!(r.holds() && r.ratio >= 1.0 - m as f64 * eps * 2f64.powi(m as i32)));
    }

    ensure!(violations == [0; 4], "violations per suite {violations:?}");
    Ok(format!("4 suites x {TRIALS} trials, zero violations"))
}

fn good_couples() -> Outcome {
    let gap = 1.0;
    let cloud = QuadratureCloud::centroid(&shapes::parallel_disks(1.0, 30, gap)?);
    let (x, y) = (vec![0.0, 0.0, 0.0], vec![0.0, 0.0, gap]);
    let mut checked = 0;
    for alpha in [0.2, 0.3, 0.45] {
        let cert = good_couple_search(&cloud, &x, &y, 0.25, alpha)?.ok_or("no certificate")?;
        ensure!(cert.certified(), "alpha = {alpha}: not certified");
        let partners = cloud.ball(&y, alpha * alpha * cert.d);
        ensure!(!partners.is_empty(), "no partner points");
        let floor = alpha / (9.0 * cert.d);
        for &z in &cert.member_points {
            let hz = cloud.plane(z);
            for &w in &partners {
                let k = inv_rtp(cloud.position(z), &hz, cloud.position(w))?;
                ensure!(k > floor, "alpha = {alpha}: pair ({z}, {w}) has {k} <= {floor}");
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} certified pairs, zero violations"))
}

fn stopping() -> Outcome {
    let q = 6.0;
    let meshes = [
        ("sphere", shapes::icosphere(3, 1.0)?),
        ("torus", shapes::torus(1.0, 0.4, 40, 20)?),
        ("capsule", shapes::capsule(0.5, 2.0, 32, 0.08)?),
        ("parallel disks", shapes::parallel_disks(1.0, 12, 0.3)?),
    ];
    let mut runs = 0;
    for cfg in [StoppingConfig::default_for(3, 2), StoppingConfig::with_delta(3, 2, 0.1)] {
        for (name, set) in &meshes {
            let cloud = QuadratureCloud::centroid(set);
            let r1 = ahlfors_radius(2, q, cfg.lambda, cfg.eta, total_energy(set, q)?)?;
            let mut d_min = f64::INFINITY;
            for xi in probe_indices(cloud.len(), 8) {
                let r = stopping_distance(set, &cloud, xi, &cfg)?;
                ensure!(r.certificate.certified(), "{name}: uncertified stop");
                ensure!(
                    r.radii_history.windows(2).all(|w| w[1] > 2.0 * w[0]),
                    "{name}: radii {:?}",
                    r.radii_history
                );
                d_min = d_min.min(r.d_s);
                runs += 1;
            }
            ensure!(d_min >= 0.95 * r1, "{name}: d = {d_min} below R_1 = {r1}");
        }
    }
    Ok(format!("{runs} stopping runs on 4 meshes under 2 configurations"))
}

fn xz_probe(center: Vec<f64>, segments: usize) -> Result<SphereProbe, Box<dyn Error>> {
    Ok(SphereProbe::new(center, 1.0, Plane::coordinate(3, &[0, 2])?, segments)?)
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        let n = norm(&v);
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

fn rotate_about(v: &[f64], axis: &[f64; 3], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let d = v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2];
    let cross = [
        axis[1] * v[2] - axis[2] * v[1],
        axis[2] * v[0] - axis[0] * v[2],
        axis[0] * v[1] - axis[1] * v[0],
    ];
    (0..3).map(|i| v[i] * c + cross[i] * s + axis[i] * d * (1.0 - c)).collect()
}

/// 100 random paths of translation, rotation and scaling along which the
/// probe moves less between samples than its clearance from the set.
fn far_paths(set: &SimplicialSet, base: &SphereProbe, expected: u8, seed: u64) -> Result<usize, Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut attempts, mut evaluations) = (0, 0, 0);
    while accepted < 100 {
        attempts += 1;
        ensure!(attempts < 2000, "could not generate far paths");
        let dir = random_unit(&mut rng);
        let len = rng.random_range(0.0..0.3);
        let axis = random_unit(&mut rng);
        let angle = rng.random_range(-0.3..0.3);
        let scale = rng.random_range(0.85..1.15);
        let steps = 24;
        let mut path = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let center: Vec<f64> = base.center.iter().zip(dir).map(|(c, u)| c + t * len * u).collect();
            let frame: Vec<Vec<f64>> = (0..base.plane.dim())
                .map(|i| rotate_about(base.plane.basis(i), &axis, t * angle))
                .collect();
            let radius = base.radius * (1.0 + t * (scale - 1.0));
            path.push(SphereProbe::new(center, radius, Plane::span(3, &frame)?, base.segments)?);
        }
        let far = path.windows(2).all(|w| {
            let moved = w[0]
                .points()
                .iter()
                .zip(w[1].points())
                .map(|(p, q)| dist(p, &q))
                .fold(0.0, f64::max);
            probe_distance(set, &w[0]).min(probe_distance(set, &w[1])) > 2.0 * moved
        });
        if !far {
            continue;
        }
        accepted += 1;
        for p in &path {
            let parity = linking_mod2(set, p)?;
            ensure!(parity == expected, "parity {parity} along a far path, expected {expected}");
            evaluations += 1;
        }
    }
    Ok(evaluations)
}

fn linking() -> Outcome {
    let circle = shapes::circle_in(64, 1.0, &[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0])?;
    ensure!(linking_mod2(&circle, &xz_probe(vec![1.0, 0.0, 0.0], 64)?)? == 1, "Hopf link parity");
    ensure!(linking_mod2(&circle, &xz_probe(vec![5.0, 0.0, 0.0], 64)?)? == 0, "distant circles parity");
    let sphere = shapes::icosphere(3, 1.0)?;
    let axis = Plane::coordinate(3, &[2])?;
    let straddle = SphereProbe::new(vec![0.0, 0.0, 1.0], 0.5, axis, 0)?;
    ensure!(linking_mod2(&sphere, &straddle)? == 1, "sphere and straddling point pair");
    for segments in [16, 32, 64, 128] {
        let p = linking_mod2(&circle, &xz_probe(vec![1.0, 0.0, 0.0], segments)?)?;
        ensure!(p == 1, "parity {p} with a {segments}-gon probe");
    }
    let mut evaluations = far_paths(&circle, &xz_probe(vec![1.0, 0.0, 0.0], 48)?, 1, 1)?;
    evaluations += far_paths(&circle, &xz_probe(vec![3.0, 0.0, 0.0], 48)?, 0, 2)?;
    let small = shapes::icosphere(2, 1.0)?;
    let pair = SphereProbe::new(vec![0.0, 0.0, 0.9], 0.6, Plane::coordinate(3, &[2])?, 0)?;
    evaluations += far_paths(&small, &pair, 1, 3)?;
    Ok(format!("fixed cases agree; {evaluations} parities along 300 far paths agree"))
}

fn jittered(set: &SimplicialSet, amount: f64, seed: u64) -> Result<SimplicialSet, Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = set.vertices().iter().map(|x| x + rng.random_range(-amount..amount)).collect();
    Ok(set.with_vertices(v)?)
}

fn gradient_and_flow() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let (set, q) = match seed % 4 {
            0 => (shapes::perturbed_circle(24 + seed as usize, 1.0, 0.08, seed)?, 4.0),
            1 => (shapes::perturbed_icosahedron(0.1, seed)?, 6.0),
            2 => (jittered(&shapes::icosphere(1, 1.0)?, 0.05, seed)?, 5.0),
            _ => (jittered(&shapes::torus(1.0, 0.4, 8, 6)?, 0.03, seed)?, 7.0),
        };
        let d = gradient_discrepancy(&set, q)?;
        ensure!(d < 1e-5, "seed {seed}: gradient discrepancy {d:.2e}");
        worst = worst.max(d);
    }

    let set = shapes::perturbed_circle(64, 1.0, 0.05, 7)?;
    let rho = set.total_measure() / (2.0 * PI);
    let target = 4.0 * PI * PI * rho.powf(-2.0);
    let mut reached = None;
    flow_run(set, 4.0, 500, &FlowPolicy::default(), |state, rec| {
        if reached.is_none() && (rec.energy - target).abs() / target < 0.01 {
            reached = Some(state.step);
        }
    })?;
    let steps = reached.ok_or("flow never came within 1% of the round circle")?;
    Ok(format!("worst gradient discrepancy {worst:.2e}; flow within 1% after {steps} steps"))
}

fn tpsurf(args: &[&str], threads_env: Option<&str>, dir: &Path) -> Result<Vec<u8>, Box<dyn Error>> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tpsurf"));
    cmd.args(args).current_dir(dir).env_remove("TPSURF_THREADS");
    if let Some(t) = threads_env {
        cmd.env("TPSURF_THREADS", t);
    }
    let out = cmd.output()?;
    ensure!(
        out.status.success(),
        "tpsurf {args:?} exited with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    tpsurf(&["fixture", "icosphere", "sphere.obj", "--level", "3"], None, dir.path())?;
    tpsurf(&["fixture", "torus", "torus.ndmesh", "--segments", "32"], None, dir.path())?;
    let runs: [&[&str]; 3] = [
        &["energy", "sphere.obj", "--deterministic", "--out", "-"],
        &["energy", "torus.ndmesh", "--mode", "bvh", "--theta", "0.5", "--deterministic", "--out", "-"],
        &["verify", "sphere.obj", "--probes", "4", "--deterministic", "--out", "-"],
    ];
    let mut bytes = 0;
    for args in runs {
        let mut outputs = Vec::new();
        for t in ["1", "4", "8"] {
            let mut a = args.to_vec();
            a.extend(["--threads", t]);
            outputs.push(tpsurf(&a, None, dir.path())?);
        }
        // the environment fallback must not change anything either
        outputs.push(tpsurf(args, Some("4"), dir.path())?);
        ensure!(!outputs[0].is_empty(), "{args:?}: empty report");
        ensure!(outputs.iter().all(|o| o == &outputs[0]), "{args:?}: reports differ across thread counts");
        bytes += outputs[0].len();
    }
    Ok(format!("3 commands x 4 thread settings byte-identical ({bytes} bytes)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("analytic circle energy", circle_energy),
        ("analytic sphere energy", sphere_energy),
        ("exact scaling law", scaling_law),
        ("Ahlfors lower bound", ahlfors),
        ("beta decay", beta_decay),
        ("tangent-plane regularity", holder),
        ("cone divergence", cone),
        ("plane-geometry lemmas", plane_lemmas),
        ("good-couple chain", good_couples),
        ("stopping distances", stopping),
        ("linking parity", linking),
        ("gradient and flow", gradient_and_flow),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}").into())
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {k:>2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(e) => {
                failed += 1;
                println!("criterion {k:>2} {name}: FAIL ({e}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
