"""Smoke test for the Python extension. Run with pytest or as a script."""

import math
import tempfile
from pathlib import Path

import tpsurf


def test_circle_energy_matches_the_round_value():
    e = tpsurf.energy(tpsurf.circle(512), q=4.0)["total_energy"]
    assert abs(e - 4 * math.pi**2) / (4 * math.pi**2) < 0.01


def test_energy_scales_with_the_exponent():
    sphere = tpsurf.icosphere(1)
    e1 = tpsurf.energy(sphere, q=6.0)["total_energy"]
    e2 = tpsurf.energy(sphere.scaled(2.0), q=6.0)["total_energy"]
    assert math.isclose(e2, e1 * 2.0 ** (4 - 6), rel_tol=1e-12)


def test_clustered_mode_stays_within_its_bound():
    sphere = tpsurf.icosphere(2)
    exact = tpsurf.energy(sphere)["total_energy"]
    fast = tpsurf.energy(sphere, mode="bvh", theta=0.5)
    assert abs(fast["total_energy"] - exact) <= fast["acceleration_error_bound"]


def test_gradient_has_one_row_per_vertex():
    sphere = tpsurf.icosphere(1)
    e, rows = tpsurf.gradient(sphere, q=6.0)
    assert len(rows) == sphere.num_vertices and all(len(r) == 3 for r in rows)
    assert math.isclose(e, tpsurf.energy(sphere, q=6.0)["total_energy"], rel_tol=1e-12)
    # the round sphere is a critical point up to rescaling: gradients are radial
    for v, g in zip(sphere.vertices(), rows):
        cross = [v[1] * g[2] - v[2] * g[1], v[2] * g[0] - v[0] * g[2], v[0] * g[1] - v[1] * g[0]]
        assert math.hypot(*cross) < 1e-6 * (1 + math.hypot(*g))


def test_hopf_link_parity():
    a, _ = tpsurf.hopf_link(64)
    xz = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
    assert tpsurf.linking_parity(a, [1.0, 0.0, 0.0], 1.0, xz) == 1
    assert tpsurf.linking_parity(a, [5.0, 0.0, 0.0], 1.0, xz) == 0


def test_mesh_round_trips_through_files():
    mesh = tpsurf.Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2], [0, 1, 3]])
    with tempfile.TemporaryDirectory() as d:
        for name in ("m.obj", "m.ndmesh"):
            path = Path(d) / name
            mesh.save(str(path))
            back = tpsurf.Mesh.load(str(path))
            assert back.vertices() == mesh.vertices()
            assert back.simplices() == mesh.simplices()
    assert math.isclose(mesh.total_measure(), 1.0)


def test_diagnostics():
    sphere = tpsurf.icosphere(3)
    upper, lower = tpsurf.beta(sphere, 0, 0.5)
    assert 0 <= lower <= upper
    stop = tpsurf.stopping_distance(sphere, 0, delta=0.1)
    assert stop["d_s"] > 0 and not stop["within_theorem_constants"]
    assert math.isclose(tpsurf.lemma_constants(2, 6.0)["mu"], 1 / 3)


def test_errors_become_python_exceptions():
    for call in (
        lambda: tpsurf.energy(tpsurf.icosphere(1), q=0.0),
        lambda: tpsurf.energy(tpsurf.icosphere(1), mode="fast"),
        lambda: tpsurf.Mesh([[0, 0], [1, 0, 0]], [[0, 1]]),
    ):
        try:
            call()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")
    try:
        tpsurf.Mesh.load("/nonexistent/mesh.obj")
    except OSError:
        pass
    else:
        raise AssertionError("expected OSError")


if __name__ == "__main__":
    tests = [f for name, f in sorted(globals().items()) if name.startswith("test_")]
    for t in tests:
        t()
        print(f"ok  {t.__name__}")
