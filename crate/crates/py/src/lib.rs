//! Python bindings: meshes, energies, gradients and the main diagnostics.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tpsurf_core::complex::{load, PlaneRule, QuadratureRule};
use tpsurf_core::linkdiag::{linking_mod2, SphereProbe};
use tpsurf_core::regdiag::{beta as beta_number, stopping_distance as stop, BetaOptions, StoppingConfig};
use tpsurf_core::tpe::{energy as total_energy, gradient as vertex_gradient, EnergyMode, GradientScheme, Reduction};
use tpsurf_core::{shapes, EnergyOptions, Error, LemmaConstants, Plane, QuadratureCloud, SimplicialSet};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::Precondition(_)
        | Error::Parse { .. }
        | Error::DegenerateSimplices { .. }
        | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A pure simplicial set: vertices in R^n and m-simplices given by vertex indices.
#[pyclass(name = "Mesh", module = "tpsurf", frozen)]
struct Mesh {
    inner: SimplicialSet,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> PyResult<Self> {
        let n = vertices.first().map_or(0, Vec::len);
        let m = simplices.first().map_or(0, |s| s.len().saturating_sub(1));
        if vertices.iter().any(|v| v.len() != n) || simplices.iter().any(|s| s.len() != m + 1) {
            return Err(PyValueError::new_err("rows of vertices and simplices must have equal lengths"));
        }
        let set = SimplicialSet::new(n, m, vertices.concat(), simplices.concat()).map_err(to_py)?;
        Ok(Mesh { inner: set })
    }

    /// Reads a `.obj` or `.ndmesh` file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Mesh {
            inner: load(&path, None).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn ambient_dim(&self) -> usize {
        self.inner.ambient_dim()
    }

    #[getter]
    fn intrinsic_dim(&self) -> usize {
        self.inner.intrinsic_dim()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    #[getter]
    fn num_simplices(&self) -> usize {
        self.inner.num_simplices()
    }

    fn vertices(&self) -> Vec<Vec<f64>> {
        self.inner.vertices().chunks(self.inner.ambient_dim()).map(<[f64]>::to_vec).collect()
    }

    fn simplices(&self) -> Vec<Vec<usize>> {
        self.inner.simplices().chunks(self.inner.intrinsic_dim() + 1).map(<[usize]>::to_vec).collect()
    }

    fn total_measure(&self) -> f64 {
        self.inner.total_measure()
    }

    fn diameter(&self) -> f64 {
        self.inner.diameter()
    }

    fn scaled(&self, factor: f64) -> PyResult<Mesh> {
        Ok(Mesh {
            inner: self.inner.scaled(factor).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(n={}, m={}, vertices={}, simplices={})",
            self.inner.ambient_dim(),
            self.inner.intrinsic_dim(),
            self.inner.num_vertices(),
            self.inner.num_simplices()
        )
    }
}

fn wrap(r: tpsurf_core::Result<SimplicialSet>) -> PyResult<Mesh> {
    Ok(Mesh { inner: r.map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (segments, radius = 1.0))]
fn circle(segments: usize, radius: f64) -> PyResult<Mesh> {
    wrap(shapes::circle(segments, radius))
}

#[pyfunction]
#[pyo3(signature = (level, radius = 1.0))]
fn icosphere(level: usize, radius: f64) -> PyResult<Mesh> {
    wrap(shapes::icosphere(level, radius))
}

#[pyfunction]
#[pyo3(signature = (big = 1.0, small = 0.4, nu = 48, nv = 24))]
fn torus(big: f64, small: f64, nu: usize, nv: usize) -> PyResult<Mesh> {
    wrap(shapes::torus(big, small, nu, nv))
}

#[pyfunction]
#[pyo3(signature = (radius = 1.0, rings = 8))]
fn flat_disk(radius: f64, rings: usize) -> PyResult<Mesh> {
    wrap(shapes::flat_disk(radius, rings))
}

/// The two components of a Hopf link in R^3.
#[pyfunction]
#[pyo3(signature = (segments = 64))]
fn hopf_link(segments: usize) -> PyResult<(Mesh, Mesh)> {
    let (a, b) = shapes::hopf_link(segments).map_err(to_py)?;
    Ok((Mesh { inner: a }, Mesh { inner: b }))
}

fn default_q(mesh: &Mesh, q: Option<f64>) -> f64 {
    q.unwrap_or(2.0 * mesh.inner.intrinsic_dim() as f64 + 2.0)
}

/// Discrete tangent-point energy. `mode` is "exact" or "bvh".
#[pyfunction]
#[pyo3(signature = (mesh, q = None, mode = "exact", theta = 0.5, quadrature = "centroid", deterministic = true))]
fn energy<'py>(
    py: Python<'py>,
    mesh: &Mesh,
    q: Option<f64>,
    mode: &str,
    theta: f64,
    quadrature: &str,
    deterministic: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "exact" => EnergyMode::Exact,
        "bvh" => EnergyMode::Bvh { theta },
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let rule = match quadrature {
        "centroid" => QuadratureRule::Centroid,
        "bary3" => QuadratureRule::Bary3,
        other => return Err(PyValueError::new_err(format!("unknown quadrature {other:?}"))),
    };
    let opts = EnergyOptions {
        q: default_q(mesh, q),
        mode,
        reduction: if deterministic { Reduction::Deterministic } else { Reduction::Fast },
    };
    let cloud = QuadratureCloud::build(&mesh.inner, rule, PlaneRule::Flat).map_err(to_py)?;
    let r = total_energy(&cloud, &opts).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("q", r.q)?;
    d.set_item("total_energy", r.total_energy)?;
    d.set_item("pair_count", r.pair_count)?;
    d.set_item("excluded_pairs", r.excluded_pairs)?;
    d.set_item("max_inv_rtp", r.max_inv_rtp)?;
    d.set_item("acceleration_error_bound", r.acceleration_error_bound)?;
    Ok(d)
}

/// Energy and its gradient with respect to the vertices, one row per vertex.
#[pyfunction]
#[pyo3(signature = (mesh, q = None))]
fn gradient(mesh: &Mesh, q: Option<f64>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let g = vertex_gradient(&mesh.inner, default_q(mesh, q), GradientScheme::Analytic).map_err(to_py)?;
    let rows = g.values.chunks(mesh.inner.ambient_dim()).map(<[f64]>::to_vec).collect();
    Ok((g.energy, rows))
}

/// Linking parity of the mesh with the round sphere of the given center and
/// radius in the span of `basis` (a circle for curves, a point pair for surfaces).
#[pyfunction]
#[pyo3(signature = (mesh, center, radius, basis, segments = 64))]
fn linking_parity(mesh: &Mesh, center: Vec<f64>, radius: f64, basis: Vec<Vec<f64>>, segments: usize) -> PyResult<u8> {
    let plane = Plane::span(center.len(), &basis).map_err(to_py)?;
    let probe = SphereProbe::new(center, radius, plane, segments).map_err(to_py)?;
    linking_mod2(&mesh.inner, &probe).map_err(to_py)
}

/// Upper and lower bounds on the beta number at a quadrature point.
#[pyfunction]
#[pyo3(signature = (mesh, index, radius, seed = 0))]
fn beta(mesh: &Mesh, index: usize, radius: f64, seed: u64) -> PyResult<(f64, f64)> {
    let cloud = QuadratureCloud::centroid(&mesh.inner);
    if index >= cloud.len() {
        return Err(PyValueError::new_err(format!("index {index} out of range")));
    }
    let opts = BetaOptions {
        seed,
        ..BetaOptions::default()
    };
    let s = beta_number(&cloud, cloud.position(index), radius, &opts).map_err(to_py)?;
    Ok((s.beta, s.lower))
}

/// Stopping distance at a quadrature point.
#[pyfunction]
#[pyo3(signature = (mesh, index, delta = None))]
fn stopping_distance<'py>(py: Python<'py>, mesh: &Mesh, index: usize, delta: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let (n, m) = (mesh.inner.ambient_dim(), mesh.inner.intrinsic_dim());
    let cfg = match delta {
        Some(d) => StoppingConfig::with_delta(n, m, d),
        None => StoppingConfig::default_for(n, m),
    };
    let cloud = QuadratureCloud::centroid(&mesh.inner);
    let r = stop(&mesh.inner, &cloud, index, &cfg).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("d_s", r.d_s)?;
    d.set_item("uncertainty", r.uncertainty)?;
    d.set_item("radii_history", r.radii_history)?;
    d.set_item("within_theorem_constants", r.within_theorem_constants)?;
    Ok(d)
}

#[pyfunction]
fn lemma_constants(py: Python<'_>, m: usize, q: f64) -> PyResult<Bound<'_, PyDict>> {
    let c = LemmaConstants::new(m, q);
    let d = PyDict::new(py);
    for (k, v) in [
        ("eps1", c.eps1),
        ("c1", c.c1),
        ("c2", c.c2),
        ("c3", c.c3),
        ("c4", c.c4),
        ("c5", c.c5),
        ("kappa", c.kappa),
        ("mu", c.mu),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

#[pymodule]
fn tpsurf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_function(wrap_pyfunction!(circle, m)?)?;
    m.add_function(wrap_pyfunction!(icosphere, m)?)?;
    m.add_function(wrap_pyfunction!(torus, m)?)?;
    m.add_function(wrap_pyfunction!(flat_disk, m)?)?;
    m.add_function(wrap_pyfunction!(hopf_link, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(linking_parity, m)?)?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(stopping_distance, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_constants, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
