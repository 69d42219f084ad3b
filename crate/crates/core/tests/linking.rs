use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpsurf_core::complex::{QuadratureCloud, SimplicialSet};
use tpsurf_core::error::Error;
use tpsurf_core::grassmann::Plane;
use tpsurf_core::linkdiag::{check_trapping_box, linking_mod2, probe_distance, BoxShape, SphereProbe, TrappingBox};
use tpsurf_core::shapes;

fn xz_plane() -> Plane {
    Plane::coordinate(3, &[0, 2]).unwrap()
}

fn hopf_probe(segments: usize) -> SphereProbe {
    SphereProbe::new(vec![1.0, 0.0, 0.0], 1.0, xz_plane(), segments).unwrap()
}

fn unit_circle() -> SimplicialSet {
    shapes::hopf_link(64).unwrap().0
}

#[test]
fn hopf_link_has_odd_parity() {
    assert_eq!(linking_mod2(&unit_circle(), &hopf_probe(64)).unwrap(), 1);
}

#[test]
fn distant_circles_are_unlinked() {
    let far = SphereProbe::new(vec![5.0, 0.0, 0.0], 1.0, xz_plane(), 64).unwrap();
    assert_eq!(linking_mod2(&unit_circle(), &far).unwrap(), 0);
    let above = SphereProbe::new(vec![0.0, 0.0, 3.0], 0.5, Plane::coordinate(3, &[0, 1]).unwrap(), 32).unwrap();
    assert_eq!(linking_mod2(&unit_circle(), &above).unwrap(), 0);
}

#[test]
fn sphere_links_a_straddling_point_pair() {
    let sphere = shapes::icosphere(3, 1.0).unwrap();
    let axis = Plane::coordinate(3, &[2]).unwrap();
    let straddle = SphereProbe::new(vec![0.0, 0.0, 1.0], 0.5, axis.clone(), 0).unwrap();
    assert_eq!(linking_mod2(&sphere, &straddle).unwrap(), 1);
    let both_outside = SphereProbe::new(vec![0.0, 0.0, 0.0], 1.5, axis.clone(), 0).unwrap();
    assert_eq!(linking_mod2(&sphere, &both_outside).unwrap(), 0);
    let inside = SphereProbe::new(vec![0.0, 0.0, 0.0], 0.5, axis.clone(), 0).unwrap();
    assert_eq!(linking_mod2(&sphere, &inside).unwrap(), 0);
    let outside = SphereProbe::new(vec![0.0, 0.0, 3.0], 0.5, axis, 0).unwrap();
    assert_eq!(linking_mod2(&sphere, &outside).unwrap(), 0);
}

#[test]
fn parity_survives_probe_refinement() {
    let set = unit_circle();
    for segments in [16, 32, 64, 128] {
        assert_eq!(linking_mod2(&set, &hopf_probe(segments)).unwrap(), 1, "segments = {segments}");
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn rotate_about(v: &[f64], axis: &[f64; 3], angle: f64) -> Vec<f64> {
    // Rodrigues rotation
    let (s, c) = angle.sin_cos();
    let d = v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2];
    let cross = [
        axis[1] * v[2] - axis[2] * v[1],
        axis[2] * v[0] - axis[0] * v[2],
        axis[0] * v[1] - axis[1] * v[0],
    ];
    (0..3).map(|i| v[i] * c + cross[i] * s + axis[i] * d * (1.0 - c)).collect()
}

/// Probe at time `t` along a path of translation, rotation and radius change.
fn probe_on_path(base: &SphereProbe, shift: &[f64; 3], axis: &[f64; 3], angle: f64, scale: f64, t: f64) -> SphereProbe {
    let center: Vec<f64> = base.center.iter().zip(shift).map(|(c, s)| c + t * s).collect();
    let frame: Vec<Vec<f64>> = (0..base.plane.dim()).map(|i| rotate_about(base.plane.basis(i), axis, t * angle)).collect();
    let plane = Plane::span(3, &frame).unwrap();
    SphereProbe::new(center, base.radius * (1.0 + t * (scale - 1.0)), plane, base.segments).unwrap()
}

/// Largest displacement of any probe vertex between consecutive path samples.
fn max_move(a: &SphereProbe, b: &SphereProbe) -> f64 {
    a.points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| p.iter().zip(&q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn check_far_paths(set: &SimplicialSet, base: &SphereProbe, expected: u8, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < 100 {
        attempts += 1;
        assert!(attempts < 2000, "could not generate far paths");
        let dir = random_unit(&mut rng);
        let len = rng.random_range(0.0..0.3);
        let shift = [dir[0] * len, dir[1] * len, dir[2] * len];
        let axis = random_unit(&mut rng);
        let angle = rng.random_range(-0.3..0.3);
        let scale = rng.random_range(0.85..1.15);
        let steps = 24;
        let path: Vec<SphereProbe> = (0..=steps)
            .map(|k| probe_on_path(base, &shift, &axis, angle, scale, k as f64 / steps as f64))
            .collect();
        // far: every sample keeps more clearance than the probe moves between samples,
        // so the swept polygon cannot cross the set
        let far = path.windows(2).all(|w| {
            let gap = probe_distance(set, &w[0]).min(probe_distance(set, &w[1]));
            gap > 2.0 * max_move(&w[0], &w[1])
        });
        if !far {
            continue;
        }
        accepted += 1;
        for p in [&path[0], &path[steps / 2], &path[steps]] {
            assert_eq!(linking_mod2(set, p).unwrap(), expected);
        }
    }
}

#[test]
fn parity_is_invariant_along_far_paths_for_curves() {
    check_far_paths(&unit_circle(), &hopf_probe(48), 1, 1);
    let far = SphereProbe::new(vec![3.0, 0.0, 0.0], 1.0, xz_plane(), 48).unwrap();
    check_far_paths(&unit_circle(), &far, 0, 2);
}

#[test]
fn parity_is_invariant_along_far_paths_for_surfaces() {
    let sphere = shapes::icosphere(2, 1.0).unwrap();
    let base = SphereProbe::new(vec![0.0, 0.0, 0.9], 0.6, Plane::coordinate(3, &[2]).unwrap(), 0).unwrap();
    check_far_paths(&sphere, &base, 1, 3);
}

#[test]
fn probes_touching_the_set_are_rejected() {
    // the probe polygon passes through the vertex (1, 0, 0) of the circle at 64 segments
    let touching = SphereProbe::new(vec![2.0, 0.0, 0.0], 1.0, xz_plane(), 64).unwrap();
    assert!(matches!(linking_mod2(&unit_circle(), &touching), Err(Error::Precondition(_))));
}

#[test]
fn unsupported_dimensions_are_reported() {
    let torus = shapes::clifford_torus(8, 8, 4).unwrap();
    let probe = SphereProbe::new(vec![0.0; 4], 1.0, Plane::coordinate(4, &[0, 1]).unwrap(), 16).unwrap();
    assert!(matches!(linking_mod2(&torus, &probe), Err(Error::Unsupported(_))));
}

#[test]
fn sphere_cap_is_trapped_by_a_tangent_box() {
    let sphere = shapes::icosphere(4, 1.0).unwrap();
    let cloud = QuadratureCloud::centroid(&sphere);
    let top = vec![0.0, 0.0, 1.0];
    let flat = Plane::coordinate(3, &[0, 1]).unwrap();
    for shape in [BoxShape::Cylinder, BoxShape::CylinderHalfBall] {
        let tbox = TrappingBox::new(top.clone(), 0.2, flat.clone(), 0.15, shape).unwrap();
        let report = check_trapping_box(&sphere, &cloud, &tbox, 5, 0).unwrap();
        assert!(report.containment, "{:?}", report.witnesses.first());
        assert_eq!(report.linking_ok, Some(true), "{:?}", report.witnesses.first());
        assert!(report.grid_points > 0);
    }

    let (s, c) = 0.5f64.sin_cos();
    let tilted = Plane::span(3, &[vec![c, 0.0, s], vec![0.0, 1.0, 0.0]]).unwrap();
    let tbox = TrappingBox::new(top, 0.2, tilted, 0.15, BoxShape::Cylinder).unwrap();
    let report = check_trapping_box(&sphere, &cloud, &tbox, 5, 0).unwrap();
    assert!(!report.containment);
}
