//! Numerical laboratory for anomalous diffusion on pre-fractal graphs.
//!
//! The crate builds finite approximations of the unbounded pre-carpet
//! (generation-`n` Sierpinski-carpet lattices in dimension `d`), equips them
//! with graph Dirichlet forms, and measures the quantities that control
//! sub-Gaussian heat kernel behaviour on such spaces:
//!
//! * [`scaling`]: two-exponent space-time scaling functions and the
//!   associated deviation rate used in off-diagonal bounds.
//! * [`carpet`]: carpet cell geometry, adjacency, balls, volume growth.
//! * [`form`]: Dirichlet energy, killed/reflecting heat semigroups, Green
//!   functions, exit times, and the sparse solvers behind them.
//! * [`inequalities`]: cutoff constructions (linear, resolvent, geometric
//!   blend, covering max) and the cutoff energy inequality they are scored
//!   against, plus Faber-Krahn, Cacciopoli, and perturbation stability.
//! * [`estimates`]: walk-dimension and on-diagonal decay fits, a
//!   Davies-Gaffney style overlap decay regression, full upper-envelope
//!   fitting, and escape-probability scans.
//! * [`timechange`]: diffusions time-changed by a radial weight, the
//!   intrinsic metric and mass profile of the changed space, and
//!   stochastic completeness classification.
//!
//! Scalar fields on vertices are plain `Vec<f64>` (aliased [`VertexField`]);
//! everything is deterministic given the caller-supplied seeds.

pub mod carpet;
pub mod error;
pub mod estimates;
pub mod form;
pub mod inequalities;
pub mod linalg;
pub mod report;
pub mod scaling;
pub mod timechange;

pub use error::Error;

/// Scalar field over the vertices of a graph, indexed by vertex id.
pub type VertexField = Vec<f64>;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
