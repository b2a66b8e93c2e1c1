//! Numerical realization of a neck-gluing construction for harmonic maps
//! between Riemann surfaces into a closed Riemannian target.
//!
//! The pipeline: preglue two harmonic maps along a neck, assemble the
//! linearized operator with a cokernel correction making it surjective,
//! build an approximate right inverse by cut-solve-patch and upgrade it to a
//! true right inverse by iterative refinement, then run a quantitative
//! Newton-Picard iteration whose hypotheses are all checked numerically.

pub mod config;
pub mod cokernel;
pub mod cutoff;
pub mod error;
pub mod fields;
pub mod generators;
pub mod grid;
pub mod harmonic;
pub mod linalg;
pub mod manifold;
pub mod newton;
pub mod norms;
pub mod preglue;
pub mod report;
pub mod vecn;

pub use error::GlueError;

pub type Result<T> = std::result::Result<T, GlueError>;
