//! Tangent-point repulsive energies of discretized `m`-dimensional sets in `R^n`.
//!
//! The crate is organised bottom-up:
//!
//! * [`grassmann`]: `m`-planes, the projector-norm angle metric and slab geometry.
//! * [`complex`]: simplicial complexes, quadrature clouds, exact ball measures and
//!   admissibility diagnostics.
//! * [`tpe`]: the tangent-point radius, global/local energies, a clustered
//!   approximation with an error bound, and the analytic discrete gradient.
//! * [`linkdiag`]: linking parity for curves and surfaces in `R^3`, trapping boxes.
//! * [`regdiag`]: beta numbers, Ahlfors ratios, good couples, stopping distances
//!   and exponent fits.
//! * [`flow`]: measure-constrained projected gradient descent on the energy.
//!
//! [`shapes`] builds the analytic test surfaces used throughout the test suites.

pub mod complex;
pub mod error;
pub mod exact_sum;
pub mod flow;
pub mod geom;
pub mod grassmann;
pub mod linalg;
pub mod linkdiag;
pub mod regdiag;
pub mod shapes;
pub mod tpe;

pub use complex::{QuadratureCloud, QuadratureRule, SimplicialSet};
pub use error::{Error, Result};
pub use grassmann::{LemmaConstants, Plane};
pub use tpe::{EnergyMode, EnergyOptions, EnergyReport};
