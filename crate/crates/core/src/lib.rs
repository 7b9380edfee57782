pub mod assembly;
pub mod geometry;
pub mod linalg;
pub mod poly;
pub mod quadrature;
pub mod scalar;
pub mod slab_solver;
pub mod trefftz;
pub mod verification;

pub use geometry::{BoundarySpec, BoundaryTag, MaterialParams, Mesh, Rect, Side, TimePartition};
pub use scalar::Scalar;
pub use slab_solver::{run, FieldState, RunOptions, RunResult};
pub use trefftz::Variant;

/// Double-precision aliases.
pub type Mesh64 = geometry::Mesh<f64>;
pub type FieldState64 = slab_solver::FieldState<f64>;
pub type BasisSet64 = trefftz::BasisSet<f64>;
pub type LocalBasis64 = trefftz::LocalBasis<f64>;
pub type AnalyticSolution64 = verification::AnalyticSolution<f64>;

/// Single-precision aliases.
pub type Mesh32 = geometry::Mesh<f32>;
pub type FieldState32 = slab_solver::FieldState<f32>;
pub type BasisSet32 = trefftz::BasisSet<f32>;
pub type LocalBasis32 = trefftz::LocalBasis<f32>;
