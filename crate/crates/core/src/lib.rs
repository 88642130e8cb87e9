//! Fully constrained least-squares spectral unmixing.
//!
//! The constrained problem `min ‖X − EA‖² s.t. A ≥ 0, 1ᵀA = 1ᵀ` is mapped by a
//! Cholesky factor `D` of `EᵀE` onto a Euclidean projection of `Y = D⁻ᵀEᵀX`
//! onto the intersection of the hyperplane `S = {u : bᵀu = 1}` with the
//! half-spaces `Nᵢ = {u : dᵢᵀu ≥ 0}`. That projection is computed with
//! Dykstra's alternating projection over the sets `S ∩ Nᵢ`, each of which
//! has a closed-form projector.
//!
//! Module map:
//!
//! * [`model`]: matrices of the mixing model and feasibility checks.
//! * [`subspace`]: the transform `D`, `Y` and per-half-space geometry.
//! * [`projectors`]: closed-form projections onto `S` and `S ∩ Nᵢ`.
//! * [`dykstra`]: the alternating projection driver and its trace.
//! * [`solver`]: end-to-end pipelines and the exact active-set oracle.
//! * [`simdata`]: synthetic libraries, abundances and noisy cubes.
//! * [`metrics`]: RE, NMSE, objective and convergence curves.
//! * [`io`]: CSV libraries, binary cubes/abundances and curve CSVs.

pub mod dykstra;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod projectors;
pub mod simdata;
pub mod solver;
pub mod subspace;

pub use error::{Error, Result};
pub use model::{AbundanceMatrix, CoefficientMatrix, EndmemberMatrix, ImageCube};
pub use subspace::SubspaceTransform;
